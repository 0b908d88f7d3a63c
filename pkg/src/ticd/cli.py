"""Command-line interface: ``ticd {gen,discover,prompt,parse,eval,pipeline}``.

Every command writes into ``--out``: ``config.json`` (the effective
configuration, reusable with ``--config``), ``inputs.json`` (SHA-256 of every
input file) and its outputs.  Exit codes: 2 configuration, 3 data,
4 transport, 5 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import glob
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import SegmentationConfig, load_manifest, normalize, save_manifest, segment_anomalies
from .discovery import DiscoveryResult, HyperParams, family_to_matrix, fit_discovery
from .exceptions import ConfigError, DataError, TCDError
from .graph import TemporalGraph
from .llm import ClientConfig, StubClient, complete, make_client
from .metrics import LayoutRules, intervention_f1, layout_eval, shd, sid
from .prior import (ParsedRelations, PromptSpec, build_prompt, datacenter_prompt_spec, parse_answer,
                    to_init_matrix, to_logits)
from .simulate import GenSpec, build_benchmark, dataset1_spec, dataset2_spec

__all__ = ["main", "build_parser", "derive_seed", "DEFAULT_CONFIG"]

log = logging.getLogger("ticd")

PRESETS = {"dataset1": dataset1_spec, "dataset2": dataset2_spec}
_STAGE_IDS = {"gen": 1, "discover": 2}

DEFAULT_CONFIG = {
    "seed": 0,
    "preset": "dataset1",
    "gen": {},
    "discovery": {},
    "normalize": True,
    "segmentation": {},
    "prompt": {},
    "client": None,
    "init": {"source": "none", "hi": 2.0, "lo": -2.0, "strictness": "lenient", "aliases": {}},
    "eval": {"sid_scope": "full", "rules": None},
}


def derive_seed(seed: int, stage: str) -> int:
    """Independent per-stage seed derived from the run seed."""
    ss = np.random.SeedSequence([int(seed), _STAGE_IDS[stage]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read_json(path, what="file", error=DataError):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise error(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise error(f"{what} {path} is not valid JSON: {exc}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    """Output directory with config snapshot and input digests."""

    def __init__(self, path, force: bool = False):
        self.path = Path(path)
        self.force = force
        self.inputs = {}

    def claim(self, *outputs):
        for name in outputs:
            if (self.path / name).exists() and not self.force:
                raise ConfigError(f"{self.path / name} already exists; pass --force to overwrite")
        self.path.mkdir(parents=True, exist_ok=True)

    def file(self, name) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name, obj) -> Path:
        p = self.file(name)
        p.write_text(_dump(obj))
        return p

    def write_text(self, name, text) -> Path:
        p = self.file(name)
        p.write_text(text)
        return p

    def add_input(self, label, path):
        path = Path(path)
        if path.is_dir():
            path = path / "dataset.json"
        if not path.exists():
            return
        self.inputs[label] = _sha256(path)
        if path.suffix == ".json" and label.startswith("dataset"):
            doc = json.loads(path.read_text())
            for entry in doc.get("regimes", []):
                for f in entry.get("segments") or [entry.get("file")]:
                    fp = path.parent / f
                    if fp.exists():
                        self.inputs[f"{label}:{f}"] = _sha256(fp)

    def finish(self, config):
        self.write_json("config.json", config)
        self.write_json("inputs.json", dict(sorted(self.inputs.items())))


# ---------------------------------------------------------------- stages

def _gen_spec(cfg) -> GenSpec:
    preset = cfg.get("preset") or "dataset1"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset]()
    data = _merge(base.to_dict(), cfg.get("gen") or {})
    # edge probabilities derive from d unless given explicitly
    for key in ("intra_edge_prob", "inter_edge_prob"):
        if key not in (cfg.get("gen") or {}) and data["d"] != base.d:
            data[key] = None
    try:
        return GenSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"invalid generator settings: {exc}") from None


def stage_gen(cfg, run: RunDir, prefix=""):
    spec = _gen_spec(cfg)
    bm = build_benchmark(spec, seed=derive_seed(cfg["seed"], "gen"))
    manifest = save_manifest(bm.dataset, run.file(f"{prefix}dataset.json"))
    run.write_json(f"{prefix}ground_truth.json", bm.ground_truth_dict())
    log.info("wrote %d regimes to %s", bm.dataset.Q, manifest.parent)
    return bm.dataset, bm.ground_truth_dict()


def _load_dataset(cfg, run: RunDir, data=None, series=None):
    if data and series:
        raise ConfigError("use either --data or --series, not both")
    if data:
        run.add_input("dataset", data)
        return load_manifest(data)
    if series:
        path = Path(series)
        run.add_input("series", path)
        try:
            raw = np.genfromtxt(path, delimiter=",", names=True)
        except OSError:
            raise DataError(f"series file not found: {path}") from None
        names = list(raw.dtype.names)
        Y = np.column_stack([raw[n] for n in names]).astype(float)
        seg_cfg = SegmentationConfig(**(cfg.get("segmentation") or {}))
        p = int(cfg.get("p", (cfg.get("gen") or {}).get("p", 1)))
        ds = segment_anomalies(Y, seg_cfg, p=p, variable_names=names)
        save_manifest(ds, run.file("segmented/dataset.json"))
        return ds
    raise ConfigError("no input data: pass --data <manifest> or --series <csv>")


def _prompt_spec(cfg, var_names, p) -> PromptSpec:
    pc = dict(cfg.get("prompt") or {})
    if pc.pop("preset", None) == "datacenter":
        base = datacenter_prompt_spec().to_dict()
        pc = _merge(base, pc)
    pc.setdefault("var_names", list(var_names))
    pc.setdefault("p", p)
    if list(pc["var_names"]) != list(var_names):
        raise ConfigError("prompt variable names differ from the dataset's variables")
    return PromptSpec.from_dict(pc)


def _init_source(cfg) -> str:
    src = (cfg.get("init") or {}).get("source", "none")
    if src == "none" or src == "client" or src.startswith(("stub:", "matrix:")):
        return src
    raise ConfigError(f"init source must be none, client, stub:<file> or matrix:<file>; got {src!r}")


def _read_matrix(path, n):
    path = Path(path)
    if path.suffix == ".npy":
        try:
            M = np.load(path)
        except FileNotFoundError:
            raise DataError(f"init matrix not found: {path}") from None
    else:
        doc = _read_json(path, "init matrix")
        M = np.asarray(doc["matrix"] if isinstance(doc, dict) else doc)
    if M.shape != (n, n):
        raise DataError(f"init matrix must be {n}x{n}, got {M.shape}")
    return M


def stage_meta_init(cfg, ds, run: RunDir):
    """Prior logits from the configured source, or ``None`` for a uniform start."""
    src = _init_source(cfg)
    ic = cfg.get("init") or {}
    d, p = ds.d, ds.p
    n = (p + 1) * d
    if src == "none":
        return None
    if src.startswith("matrix:"):
        path = src.split(":", 1)[1]
        run.add_input("init_matrix", path)
        M0 = _read_matrix(path, n)
    else:
        if src == "client":
            if not cfg.get("client"):
                raise ConfigError("init source 'client' needs a 'client' section in the config")
            client = make_client(ClientConfig.from_dict(cfg["client"]))
        else:
            stub = src.split(":", 1)[1]
            run.add_input("stub_response", stub)
            client = StubClient(stub)
        prompt = build_prompt(_prompt_spec(cfg, ds.variable_names, p))
        text = complete(client, prompt, log_dir=run.file("llm/.keep").parent)
        rel = parse_answer(text, ds.variable_names, d, p, ic.get("strictness", "lenient"), ic.get("aliases"))
        run.write_json("llm/relations.json", rel.to_dict())
        M0 = to_init_matrix(rel, d, p)
    run.write_json("init_matrix.json", {"d": d, "p": p, "matrix": np.asarray(M0).astype(int).tolist()})
    return to_logits(M0, d, p, float(ic.get("hi", 2.0)), float(ic.get("lo", -2.0)))


def stage_discover(cfg, ds, run: RunDir, init_logits=None, targets_file=None):
    hp = HyperParams.from_dict(cfg.get("discovery") or {})
    if cfg.get("normalize", True):
        ds, _ = normalize(ds)
    R_true = None
    if hp.mode == "known":
        if not targets_file:
            raise ConfigError("known-targets mode needs --targets <ground_truth.json>")
        run.add_input("targets", targets_file)
        doc = _read_json(targets_file, "targets file")
        family = doc["targets"] if isinstance(doc, dict) else doc
        if len(family) != ds.Q:
            raise DataError(f"targets list {len(family)} regimes, dataset has {ds.Q}")
        R_true = family_to_matrix(family, ds.Q, ds.d, ds.p)

    def report(entry):
        log.info("outer %d: h=%.3e mu=%.1e score=%s", entry.iteration, entry.h, entry.mu, entry.score)

    res = fit_discovery(ds.regimes, ds.d, ds.p, hp, init_logits=init_logits, R_true=R_true,
                        seed=derive_seed(cfg["seed"], "discover"), callback=report)
    doc = res.to_dict()
    doc["variables"] = ds.variable_names
    run.write_json("result.json", doc)
    return res


def _fmt(values):
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return None
    return {"mean": float(a.mean()), "std": float(a.std()), "formatted": f"{a.mean():.2f}±{a.std():.2f}"}


def stage_eval(cfg, results, run: RunDir, truth_file=None, rules_file=None):
    ec = cfg.get("eval") or {}
    scope = ec.get("sid_scope", "full")
    rules_file = rules_file or ec.get("rules")
    truth = None
    if truth_file:
        run.add_input("truth", truth_file)
        truth = _read_json(truth_file, "ground truth")
    rules = None
    if rules_file:
        run.add_input("rules", rules_file)
        rules = LayoutRules.load(rules_file)
    else:
        log.info("no layout rules given; layout metrics omitted")
    if truth is None and rules is None:
        raise ConfigError("nothing to evaluate against: pass --truth and/or --rules")
    rows = []
    for path in results:
        doc = _read_json(path, "result file")
        run.add_input(f"result:{Path(path).name}", path)
        est = TemporalGraph.from_dict(doc["graph"])
        # paths inside the run directory are stored relative to it so reruns compare byte-for-byte
        try:
            shown = Path(path).resolve().relative_to(run.path.resolve())
        except ValueError:
            shown = path
        row = {"file": str(shown), "n_edges": est.n_edges()}
        if truth is not None:
            g_true = TemporalGraph.from_dict(truth)
            row["shd"] = shd(g_true, est)
            row["sid"] = sid(g_true, est, scope=scope)
            if "targets" in truth and "family" in doc and len(truth["targets"]) == len(doc["family"]):
                pr, rc, f1 = intervention_f1(truth["targets"], doc["family"])
                row.update(target_precision=pr, target_recall=rc, target_f1=f1)
        if rules is not None:
            row.update(layout_eval(est.slices(), rules, doc.get("variables")))
        rows.append(row)
    keys = [k for k in rows[0] if k not in ("file",)] if rows else []
    summary = {k: _fmt([r[k] for r in rows if k in r]) for k in keys}
    report = {"sid_scope": scope, "rows": rows, "summary": summary}
    run.write_json("metrics.json", report)
    return report


# ---------------------------------------------------------------- commands

def cmd_gen(args, cfg):
    run = RunDir(args.out, args.force)
    run.claim("dataset.json", "ground_truth.json")
    stage_gen(cfg, run)
    run.finish(cfg)


def cmd_discover(args, cfg):
    run = RunDir(args.out, args.force)
    run.claim("result.json")
    ds = _load_dataset(cfg, run, args.data, args.series)
    logits = stage_meta_init(cfg, ds, run)
    stage_discover(cfg, ds, run, logits, args.targets)
    run.finish(cfg)


def cmd_prompt(args, cfg):
    pc = dict(cfg.get("prompt") or {})
    if args.preset == "datacenter" or pc.get("preset") == "datacenter":
        pc.pop("preset", None)
        spec = PromptSpec.from_dict(_merge(datacenter_prompt_spec().to_dict(), pc))
    else:
        if args.names:
            pc["var_names"] = [s.strip() for s in args.names.split(",") if s.strip()]
        if args.p is not None:
            pc["p"] = args.p
        if args.cot:
            pc["cot"] = args.cot
        if "var_names" not in pc:
            raise ConfigError("prompt needs variable names (--names or a 'prompt' config section)")
        pc.setdefault("p", 1)
        spec = PromptSpec.from_dict(pc)
    text = build_prompt(spec)
    if args.out:
        run = RunDir(args.out, args.force)
        run.claim("prompt.txt")
        run.write_text("prompt.txt", text)
        run.finish(_merge(cfg, {"prompt": spec.to_dict()}))
    else:
        sys.stdout.write(text)


def cmd_parse(args, cfg):
    if args.response == "-":
        text = sys.stdin.read()
    else:
        try:
            text = Path(args.response).read_text()
        except FileNotFoundError:
            raise DataError(f"response file not found: {args.response}") from None
    if args.names:
        names = [s.strip() for s in args.names.split(",") if s.strip()]
    elif args.data:
        names = load_manifest(args.data).variable_names
    else:
        raise ConfigError("parse needs variable names (--names or --data)")
    ic = cfg.get("init") or {}
    p = args.p if args.p is not None else int((cfg.get("gen") or {}).get("p", 1))
    strictness = "strict" if args.strict else ic.get("strictness", "lenient")
    rel = parse_answer(text, names, len(names), p, strictness, ic.get("aliases"))
    doc = {"variables": names, "p": p, **rel.to_dict()}
    if args.out:
        run = RunDir(args.out, args.force)
        run.claim("relations.json")
        if args.response != "-":
            run.add_input("response", args.response)
        run.write_json("relations.json", doc)
        M0 = to_init_matrix(rel, len(names), p)
        run.write_json("init_matrix.json", {"d": len(names), "p": p, "matrix": M0.astype(int).tolist()})
        run.finish(cfg)
    else:
        sys.stdout.write(_dump(doc))


def cmd_eval(args, cfg):
    files = []
    for pattern in args.result:
        hits = sorted(glob.glob(pattern))
        if not hits:
            raise DataError(f"no result files match {pattern!r}")
        files.extend(hits)
    run = RunDir(args.out, args.force)
    run.claim("metrics.json")
    report = stage_eval(cfg, files, run, args.truth, args.rules)
    run.finish(cfg)
    sys.stdout.write(_dump(report["summary"]))


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except TCDError as exc:
        exc.args = (f"stage {name}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def cmd_pipeline(args, cfg):
    run = RunDir(args.out, args.force)
    run.claim("result.json", "metrics.json")
    truth_file = args.truth
    if args.data or args.series:
        ds = _stage("load", _load_dataset, cfg, run, args.data, args.series)
    else:
        ds, _ = _stage("gen", stage_gen, cfg, run, "data/")
        truth_file = truth_file or str(run.path / "data" / "ground_truth.json")
    logits = _stage("meta-init", stage_meta_init, cfg, ds, run)
    _stage("discover", stage_discover, cfg, ds, run, logits, args.targets or (
        truth_file if (cfg.get("discovery") or {}).get("mode") == "known" else None))
    rules = args.rules or (cfg.get("eval") or {}).get("rules")
    if truth_file or rules:
        _stage("eval", stage_eval, cfg, [run.path / "result.json"], run, truth_file, rules)
    run.finish(cfg)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ticd", description="Interventional temporal causal discovery.")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="run seed (overrides the config)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--force", action="store_true", help="overwrite existing outputs")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic benchmark")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--d", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--Q", type=int)
    g.add_argument("--T", type=int)

    def data_args(sp):
        sp.add_argument("--data", help="dataset manifest (dataset.json or its directory)")
        sp.add_argument("--series", help="CSV telemetry to split into regimes by anomaly segmentation")
        sp.add_argument("--mode", choices=("known", "unknown"))
        sp.add_argument("--perfect", action="store_true", default=None,
                        help="model interventions as parent-free mechanisms")
        sp.add_argument("--targets", help="ground_truth.json with 'targets' (known mode)")
        sp.add_argument("--init", help="none | client | stub:<response.txt> | matrix:<file>")
        sp.add_argument("--init-matrix", help="prior adjacency file (same as --init matrix:<file>)")

    dsc = sub.add_parser("discover", help="fit a temporal causal graph")
    data_args(dsc)

    pr = sub.add_parser("prompt", help="print or write the meta-initialisation prompt")
    pr.add_argument("--preset", choices=("datacenter",))
    pr.add_argument("--names", help="comma-separated variable names")
    pr.add_argument("--p", type=int)
    pr.add_argument("--cot", choices=("none", "zero_shot", "one_shot"))

    pa = sub.add_parser("parse", help="parse a language-model answer into relations")
    pa.add_argument("response", help="response text file, or - for stdin")
    pa.add_argument("--names", help="comma-separated variable names")
    pa.add_argument("--data", help="dataset manifest providing the variable names")
    pa.add_argument("--p", type=int)
    pa.add_argument("--strict", action="store_true")

    ev = sub.add_parser("eval", help="score result files against ground truth / layout rules")
    ev.add_argument("result", nargs="+", help="result.json files or glob patterns")
    ev.add_argument("--truth", help="ground_truth.json")
    ev.add_argument("--rules", help="layout rules JSON")
    ev.add_argument("--sid-scope", choices=("full", "intra"))

    pl = sub.add_parser("pipeline", help="gen (or load), meta-init, discover and eval in one run")
    data_args(pl)
    pl.add_argument("--preset", choices=sorted(PRESETS))
    pl.add_argument("--truth", help="ground_truth.json for evaluation of loaded data")
    pl.add_argument("--rules", help="layout rules JSON")
    return ap


def _effective_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        user = _read_json(args.config, "config file", ConfigError)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    over = {}
    if getattr(args, "preset", None) and args.command in ("gen", "pipeline"):
        cfg["preset"] = args.preset
    for key in ("d", "p", "Q", "T"):
        v = getattr(args, key, None) if args.command == "gen" else None
        if v is not None:
            over[key] = v
    if over:
        cfg["gen"] = _merge(cfg["gen"], over)
    disc = {}
    if getattr(args, "mode", None):
        disc["mode"] = args.mode
    if getattr(args, "perfect", None):
        disc["perfect"] = True
    if disc:
        cfg["discovery"] = _merge(cfg["discovery"], disc)
    init = getattr(args, "init", None)
    if getattr(args, "init_matrix", None):
        if init and init != "none":
            raise ConfigError("--init and --init-matrix are mutually exclusive")
        init = f"matrix:{args.init_matrix}"
    if init:
        cfg["init"] = _merge(cfg["init"], {"source": init})
    if getattr(args, "sid_scope", None):
        cfg["eval"] = _merge(cfg["eval"], {"sid_scope": args.sid_scope})
    return cfg


COMMANDS = {
    "gen": cmd_gen, "discover": cmd_discover, "prompt": cmd_prompt, "parse": cmd_parse,
    "eval": cmd_eval, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        if args.out is None and args.command not in ("prompt", "parse"):
            raise ConfigError(f"'{args.command}' needs --out <dir>")
        COMMANDS[args.command](args, cfg)
    except TCDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
