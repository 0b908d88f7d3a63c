"""Regime datasets: windowing, normalisation, n-sigma segmentation and the
on-disk manifest format.

A :class:`RegimeDataset` keeps the raw (pre-windowing) series of each regime as
one or more contiguous segments.  Windowed samples are derived on demand so
that no sample ever straddles a segment or regime boundary.

Manifest layout (``dataset.json``)::

    {"schema": 1, "d": 5, "p": 1, "variables": ["x1", ...],
     "regimes": [{"file": "regime_0.csv", "observational": true}, ...]}

A regime made of several disjoint spans lists them under an optional
``"segments"`` key; ``"file"`` then names the first one.  Each CSV has the
variable names as header and one row per time step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

__all__ = [
    "RegimeDataset",
    "NormalizationStats",
    "SegmentationConfig",
    "window",
    "normalize",
    "segment_anomalies",
    "save_manifest",
    "load_manifest",
    "MANIFEST_NAME",
    "SCHEMA_VERSION",
]

MANIFEST_NAME = "dataset.json"
SCHEMA_VERSION = 1


def window(series, p: int) -> np.ndarray:
    """Stack ``[Y_t | Y_{t-1} | ... | Y_{t-p}]`` for ``t = p .. T-1``."""
    Y = np.asarray(series, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T = Y.shape[0]
    if p < 0:
        raise ValueError(f"p must be non-negative, got {p}")
    if T <= p:
        raise ValueError(f"series of length {T} is too short for lag {p}")
    return np.hstack([Y[p - k:T - k] for k in range(p + 1)])


@dataclass(frozen=True, eq=False)
class RegimeDataset:
    d: int
    p: int
    variable_names: list[str]
    segments: list[list[np.ndarray]]
    observational: list[bool] = field(default=None)

    def __post_init__(self):
        if len(self.variable_names) != self.d:
            raise DataError(f"{len(self.variable_names)} variable names for d={self.d}")
        if not self.segments:
            raise DataError("dataset needs at least one regime")
        obs = self.observational
        if obs is None:
            obs = [q == 0 for q in range(len(self.segments))]
        if len(obs) != len(self.segments):
            raise DataError("observational flags do not match the regime count")
        if not obs[0]:
            raise DataError("regime 0 must be observational")
        segs = []
        for q, regime in enumerate(self.segments):
            if not regime:
                raise DataError(f"regime {q} has no data")
            fixed = []
            for s in regime:
                a = np.asarray(s, dtype=float)
                if a.ndim != 2 or a.shape[1] != self.d:
                    raise DataError(f"regime {q}: expected {self.d} columns, got shape {a.shape}")
                if a.shape[0] <= self.p:
                    raise DataError(f"regime {q}: segment of length {a.shape[0]} too short for lag {self.p}")
                fixed.append(a)
            segs.append(fixed)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "observational", list(obs))
        object.__setattr__(self, "variable_names", list(self.variable_names))

    @classmethod
    def from_series(cls, series, p: int, variable_names=None, observational=None) -> RegimeDataset:
        """One contiguous series per regime."""
        series = [np.asarray(s, dtype=float) for s in series]
        d = series[0].shape[1]
        names = variable_names or [f"x{j + 1}" for j in range(d)]
        return cls(d=d, p=p, variable_names=names, segments=[[s] for s in series], observational=observational)

    @property
    def Q(self) -> int:
        return len(self.segments)

    @property
    def n_features(self) -> int:
        return (self.p + 1) * self.d

    @property
    def regimes(self) -> list[np.ndarray]:
        """Windowed samples of every regime, each ``N_q x (p + 1) d``."""
        return [np.vstack([window(s, self.p) for s in regime]) for regime in self.segments]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples as one matrix plus the regime label of each row."""
        regs = self.regimes
        X = np.vstack(regs)
        labels = np.concatenate([np.full(len(r), q) for q, r in enumerate(regs)])
        return X, labels

    def observational_only(self) -> RegimeDataset:
        return RegimeDataset(self.d, self.p, self.variable_names, [self.segments[0]], [True])

    def __eq__(self, other):
        if not isinstance(other, RegimeDataset):
            return NotImplemented
        if (self.d, self.p, self.variable_names, self.observational) != (
            other.d, other.p, other.variable_names, other.observational
        ):
            return False
        if len(self.segments) != len(other.segments):
            return False
        return all(
            len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
            for a, b in zip(self.segments, other.segments)
        )


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, series: np.ndarray) -> np.ndarray:
        return (series - self.mean) / self.std

    def invert(self, series: np.ndarray) -> np.ndarray:
        return series * self.std + self.mean


def normalize(ds: RegimeDataset, pooled: bool = True):
    """z-score every variable; lagged copies share their variable's transform.

    Statistics come from the contemporaneous columns of the windowed samples,
    pooled over all regimes (``pooled=False`` normalises each regime with its
    own statistics and returns one stats object per regime).
    """
    d = ds.d

    def stats_for(samples):
        cur = samples[:, :d]
        mean = cur.mean(axis=0)
        std = cur.std(axis=0)
        bad = np.flatnonzero(~(std > 0))
        if bad.size:
            raise DataError(f"variable {ds.variable_names[bad[0]]!r} has zero variance")
        return NormalizationStats(mean, std)

    regs = ds.regimes
    if pooled:
        st = stats_for(np.vstack(regs))
        segs = [[st.apply(s) for s in regime] for regime in ds.segments]
        out_stats = st
    else:
        out_stats = [stats_for(r) for r in regs]
        segs = [[st.apply(s) for s in regime] for st, regime in zip(out_stats, ds.segments)]
    return RegimeDataset(ds.d, ds.p, ds.variable_names, segs, ds.observational), out_stats


@dataclass(frozen=True)
class SegmentationConfig:
    """n-sigma anomaly segmentation settings.

    ``reference`` selects the rows used for the per-variable mean and standard
    deviation: ``None`` (whole series), a ``(start, stop)`` row range, or a
    ``(mean, std)`` pair of arrays computed elsewhere.
    """

    n_sigma: float = 3.0
    window_len: int = 120
    reference: tuple | None = None
    merge_events: bool = False

    def validate(self, p: int):
        if not self.n_sigma > 0:
            raise DataError(f"n_sigma must be positive, got {self.n_sigma}")
        if self.window_len < p + 1:
            raise DataError(f"window_len {self.window_len} shorter than p + 1 = {p + 1}")


def _reference_stats(Y: np.ndarray, ref):
    if ref is None:
        return Y.mean(axis=0), Y.std(axis=0)
    a, b = ref
    if np.ndim(a) == 0:
        span = Y[int(a):int(b)]
        if len(span) < 2:
            raise DataError(f"reference span {ref} holds fewer than two rows")
        return span.mean(axis=0), span.std(axis=0)
    return np.asarray(a, dtype=float), np.asarray(b, dtype=float)


def _onsets(Y, cfg):
    mean, std = _reference_stats(Y, cfg.reference)
    if np.any(~(std > 0)):
        # constant reference variables only flag exact departures
        std = np.where(std > 0, std, np.inf)
    flagged = np.any(np.abs(Y - mean) > cfg.n_sigma * std, axis=1)
    flagged &= np.all(np.isfinite(Y), axis=1)
    return np.flatnonzero(flagged)


def detect_events(series, cfg: SegmentationConfig) -> list[tuple[int, int]]:
    """``(start, stop)`` rows of each anomaly event; onsets inside an open
    event window are absorbed into it."""
    Y = np.asarray(series, dtype=float)
    events = []
    for t in _onsets(Y, cfg):
        t = int(t)
        if events and t < events[-1][0] + cfg.window_len:
            continue
        events.append((t, min(t + cfg.window_len, len(Y))))
    return events


def segment_anomalies(series, cfg: SegmentationConfig, p: int = 0, variable_names=None) -> RegimeDataset:
    """Split a long telemetry series into an observational regime and one
    interventional regime per anomaly event (or a single pooled one with
    ``cfg.merge_events``)."""
    Y = np.asarray(series, dtype=float)
    if Y.ndim != 2:
        raise DataError(f"expected a T x d series, got shape {Y.shape}")
    cfg.validate(p)
    events = [e for e in detect_events(Y, cfg) if e[1] - e[0] > p]
    in_event = np.zeros(len(Y), dtype=bool)
    for a, b in events:
        in_event[a:b] = True
    normal = []
    t = 0
    while t < len(Y):
        if in_event[t]:
            t += 1
            continue
        s = t
        while t < len(Y) and not in_event[t]:
            t += 1
        if t - s > p:
            normal.append(Y[s:t])
    if not normal:
        raise DataError(f"no anomaly-free span longer than p = {p} for the observational regime")
    event_segs = [Y[a:b] for a, b in events]
    if cfg.merge_events and event_segs:
        regimes = [normal, event_segs]
    else:
        regimes = [normal] + [[s] for s in event_segs]
    d = Y.shape[1]
    names = variable_names or [f"x{j + 1}" for j in range(d)]
    return RegimeDataset(d, p, names, regimes, [True] + [False] * (len(regimes) - 1))


def _write_csv(path: Path, names, rows: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _read_csv(path: Path, names) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"regime file not found: {path}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) != len(names):
        raise DataError(f"{path}: expected {len(names)} columns, got {len(header)}")
    if header != list(names):
        raise DataError(f"{path}: header {header} does not match variables {list(names)}")
    out = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        if len(row) != len(names):
            raise DataError(f"{path}: row {i + 2} has {len(row)} columns, expected {len(names)}")
        try:
            out[i] = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from None
    return out


def save_manifest(ds: RegimeDataset, path) -> Path:
    """Write ``dataset.json`` plus one CSV per regime segment into ``path``
    (a directory, or the manifest file itself)."""
    path = Path(path)
    root, manifest = (path.parent, path) if path.suffix == ".json" else (path, path / MANIFEST_NAME)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for q, regime in enumerate(ds.segments):
        files = [f"regime_{q}.csv"] + [f"regime_{q}.part{k}.csv" for k in range(1, len(regime))]
        for fname, seg in zip(files, regime):
            _write_csv(root / fname, ds.variable_names, seg)
        entry = {"file": files[0], "observational": bool(ds.observational[q])}
        if len(files) > 1:
            entry["segments"] = files
        entries.append(entry)
    doc = {"schema": SCHEMA_VERSION, "d": ds.d, "p": ds.p, "variables": ds.variable_names, "regimes": entries}
    manifest.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest


def load_manifest(path) -> RegimeDataset:
    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    try:
        doc = json.loads(manifest.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {manifest}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest}: invalid JSON ({exc})") from None
    if doc.get("schema") != SCHEMA_VERSION:
        raise DataError(f"{manifest}: unsupported schema version {doc.get('schema')!r} (expected {SCHEMA_VERSION})")
    try:
        d, p, names, regs = int(doc["d"]), int(doc["p"]), list(doc["variables"]), doc["regimes"]
    except KeyError as exc:
        raise DataError(f"{manifest}: missing field {exc}") from None
    if len(names) != d:
        raise DataError(f"{manifest}: {len(names)} variable names for d={d}")
    segments, obs = [], []
    for entry in regs:
        files = entry.get("segments") or [entry["file"]]
        segments.append([_read_csv(manifest.parent / f, names) for f in files])
        obs.append(bool(entry.get("observational", False)))
    return RegimeDataset(d, p, names, segments, obs)
