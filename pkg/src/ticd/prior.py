"""Prior graphs from language-model answers: prompt assembly, answer parsing
and initial edge logits."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .exceptions import ConfigError, DataError, ParseError
from .graph import structural_mask, unrolled_index

__all__ = [
    "PromptSpec",
    "ParsedRelations",
    "build_prompt",
    "parse_answer",
    "render_answer",
    "to_init_matrix",
    "to_logits",
    "format_excerpt",
    "datacenter_prompt_spec",
    "default_role",
    "COT_MODES",
]

log = logging.getLogger(__name__)

COT_MODES = ("none", "zero_shot", "one_shot")
_MARKER = "Answer:"
_EXCERPT = 80
# (name, name, integer) with optional quotes and arbitrary whitespace
_TUPLE_RE = re.compile(
    r"\(\s*(['\"]?)([^,()'\"\s]+)\1\s*,\s*(['\"]?)([^,()'\"\s]+)\3\s*,\s*([+-]?\d+)\s*\)"
)


@lru_cache(maxsize=None)
def _template() -> dict:
    return json.loads(resources.files("ticd").joinpath("resources/prompt_template.json").read_text())


def default_role(domain: str = "the application domain at hand") -> str:
    return _template()["role"].format(domain=domain)


@dataclass
class PromptSpec:
    """Ingredients of a structured prompt.

    ``knowledge_blocks`` are free-text sections (context description,
    physical structure, generating rules) emitted in order.  ``task_text``
    overrides the templated task sentence; when it is ``None`` the variable
    count, names and lag are substituted into the default task.
    """

    var_names: list[str]
    p: int
    n: int | None = None
    role_text: str | None = None
    introduction_text: str | None = None
    knowledge_blocks: list[str] = field(default_factory=list)
    data_excerpt: str | None = None
    implication_text: str | None = None
    cot: str = "none"
    example_text: str | None = None
    task_text: str | None = None

    def __post_init__(self):
        self.var_names = list(self.var_names)
        if self.n is None:
            self.n = len(self.var_names)
        if self.role_text is None:
            self.role_text = default_role()
        if self.introduction_text is None:
            self.introduction_text = _template()["introduction"]
        self.validate()

    def validate(self):
        if not self.var_names:
            raise ConfigError("a prompt needs at least one variable name")
        if self.n != len(self.var_names):
            raise ConfigError(f"n={self.n} but {len(self.var_names)} variable names given")
        if len(set(self.var_names)) != len(self.var_names):
            raise ConfigError("variable names must be unique")
        if self.p < 0:
            raise ConfigError(f"p must be non-negative, got {self.p}")
        if self.cot not in COT_MODES:
            raise ConfigError(f"cot must be one of {COT_MODES}, got {self.cot!r}")
        if self.cot == "one_shot" and not self.example_text:
            raise ConfigError("one-shot hints need example_text")
        if not self.role_text or not self.introduction_text:
            raise ConfigError("role and introduction sections cannot be empty")

    def to_dict(self) -> dict:
        return {
            "var_names": self.var_names, "p": self.p, "n": self.n, "role_text": self.role_text,
            "introduction_text": self.introduction_text, "knowledge_blocks": list(self.knowledge_blocks),
            "data_excerpt": self.data_excerpt, "implication_text": self.implication_text, "cot": self.cot,
            "example_text": self.example_text, "task_text": self.task_text,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PromptSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown prompt fields: {sorted(unknown)}")
        if "var_names" not in data or "p" not in data:
            raise ConfigError("prompt spec needs 'var_names' and 'p'")
        return cls(**data)


def datacenter_prompt_spec() -> PromptSpec:
    """The bundled 38-variable data-center prompt (20 CRAC supply
    temperatures and 18 cold-aisle sensors)."""
    data = json.loads(resources.files("ticd").joinpath("resources/datacenter_prompt.json").read_text())
    return PromptSpec.from_dict(data)


def format_excerpt(series, var_names, rows: int = 10, digits: int = 3) -> str:
    """Render the first ``rows`` rows of a (T, d) series as comma-separated text."""
    X = np.asarray(series, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(var_names):
        raise DataError(f"series must be (T, {len(var_names)}), got {X.shape}")
    lines = [",".join(var_names)]
    lines += [",".join(f"{v:.{digits}f}" for v in row) for row in X[:rows]]
    return "\n".join(lines)


def build_prompt(spec: PromptSpec) -> str:
    """Assemble the prompt: definition, information, task, then hints."""
    spec.validate()
    tmpl = _template()
    task = spec.task_text or tmpl["task"].format(n=spec.n, names=", ".join(spec.var_names), p=spec.p)
    parts = [
        "## Prompt D (Definition)",
        f"Role: {spec.role_text}",
        f"Introduction: {spec.introduction_text}",
    ]
    if spec.knowledge_blocks or spec.data_excerpt:
        parts.append("## Prompt I (Information)")
        for block in spec.knowledge_blocks:
            parts.append(f"Domain knowledge: {block}")
        if spec.data_excerpt:
            parts.append(f"Data:\n{spec.data_excerpt}")
    parts += ["## Prompt C (Causal discovery in the temporal domain)", f"Task: {task}"]
    hints = []
    if spec.implication_text:
        hints.append(f"Implication: {spec.implication_text}")
    if spec.cot == "one_shot":
        hints.append(f"Example: {spec.example_text}")
    if spec.cot != "none":
        hints.append(f"CoT: {tmpl['cot']}")
    if hints:
        parts += ["## Prompt H (Hint)", *hints]
    return "\n\n".join(parts) + "\n"


@dataclass(frozen=True)
class ParsedRelations:
    """Set of ``(u, v, t)``: variable ``u`` at lag ``t`` causes current ``v``."""

    tuples: frozenset = frozenset()
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tuples", frozenset((int(u), int(v), int(t)) for u, v, t in self.tuples))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def validate(self, d: int, p: int):
        for u, v, t in self.tuples:
            reason = _violation(u, v, t, d, p)
            if reason:
                raise DataError(f"invalid relation {(u, v, t)}: {reason}")

    def sorted(self) -> list[tuple[int, int, int]]:
        return sorted(self.tuples, key=lambda r: (r[2], r[0], r[1]))

    def to_dict(self) -> dict:
        return {"tuples": [list(r) for r in self.sorted()], "warnings": [list(w) for w in self.warnings]}

    @classmethod
    def from_dict(cls, data: dict) -> ParsedRelations:
        return cls(frozenset(tuple(r) for r in data.get("tuples", [])),
                   tuple(tuple(w) for w in data.get("warnings", [])))


def _violation(u, v, t, d, p):
    if not (0 <= u < d and 0 <= v < d):
        return "variable index out of range"
    if t < 0:
        return "negative lag"
    if t > p:
        return "lag exceeds p"
    if t == 0 and u == v:
        return "intra-slice self edge"
    return None


def _excerpt(text: str, start: int = 0) -> str:
    snippet = text[start:start + _EXCERPT].replace("\n", " ")
    return snippet + ("..." if len(text) > start + _EXCERPT else "")


def _answer_region(text: str) -> tuple[str, int]:
    pos = text.rfind(_MARKER)
    if pos < 0:
        raise ParseError(f"no '{_MARKER}' marker in response: {_excerpt(text)!r}")
    body = text[pos + len(_MARKER):]
    lo = body.find("[")
    if lo < 0:
        return body, pos
    depth = 0
    for k in range(lo, len(body)):
        if body[k] == "[":
            depth += 1
        elif body[k] == "]":
            depth -= 1
            if depth == 0:
                return body[lo:k + 1], pos
    # unterminated list: take everything after the bracket
    return body[lo:], pos


def parse_answer(text: str, var_names, d: int | None = None, p: int = 1, strictness: str = "lenient",
                 aliases: dict | None = None) -> ParsedRelations:
    """Parse ``(name, name, lag)`` tuples after the last ``Answer:`` marker.

    Names are matched exactly (case-sensitive); ``aliases`` maps extra
    spellings to canonical names.  Invalid tuples are dropped with a warning
    (``strictness="lenient"``) or raise :class:`ParseError` (``"strict"``).
    A lagged self edge ``(x, x, t > 0)`` is kept but noted in the warnings.
    """
    if strictness not in ("lenient", "strict"):
        raise ConfigError(f"strictness must be 'lenient' or 'strict', got {strictness!r}")
    names = list(var_names)
    d = len(names) if d is None else d
    if len(names) != d:
        raise ConfigError(f"{len(names)} variable names for d={d}")
    index = {name: k for k, name in enumerate(names)}
    for alias, target in (aliases or {}).items():
        if target not in index:
            raise ConfigError(f"alias {alias!r} points to unknown variable {target!r}")
        index.setdefault(alias, index[target])

    region, pos = _answer_region(text)
    found, warnings = set(), []
    for m in _TUPLE_RE.finditer(region):
        raw = m.group(0)
        a, b, t = m.group(2), m.group(4), int(m.group(5))
        reason = None
        if a not in index or b not in index:
            missing = a if a not in index else b
            reason = f"unknown variable {missing!r}"
        else:
            u, v = index[a], index[b]
            reason = _violation(u, v, t, d, p)
        if reason:
            if strictness == "strict":
                raise ParseError(f"rejected tuple {raw}: {reason}")
            warnings.append((raw, reason))
            continue
        if u == v:
            warnings.append((raw, "lagged self edge"))
        found.add((u, v, t))
    if not found:
        raise ParseError(f"no parseable relation tuples after '{_MARKER}': {_excerpt(text, pos)!r}")
    for raw, reason in warnings:
        log.warning("answer tuple %s: %s", raw, reason)
    return ParsedRelations(frozenset(found), tuple(warnings))


def render_answer(rel: ParsedRelations, var_names) -> str:
    """Inverse of :func:`parse_answer` for valid relations."""
    names = list(var_names)
    body = ", ".join(f"({names[u]}, {names[v]}, {t})" for u, v, t in rel.sorted())
    return f"{_MARKER} [{body}]"


def to_init_matrix(rel: ParsedRelations, d: int, p: int) -> np.ndarray:
    """Binary prior adjacency: ``M0[t*d + u, v] = 1`` for each ``(u, v, t)``."""
    rel.validate(d, p)
    n = (p + 1) * d
    M0 = np.zeros((n, n), dtype=np.int8)
    for u, v, t in rel.tuples:
        M0[unrolled_index(t, u, d, p), v] = 1
    return M0


def to_logits(M0, d: int, p: int, hi: float = 2.0, lo: float = -2.0) -> np.ndarray:
    """Initial edge logits: ``hi`` on prior edges, ``lo`` elsewhere.

    Without a prior every logit is 0 (probability 1/2).  Positions that can
    never carry an edge are 0 in both cases; the optimiser ignores them.
    """
    if not hi > lo:
        raise ConfigError(f"need hi > lo, got hi={hi}, lo={lo}")
    n = (p + 1) * d
    allowed = structural_mask(d, p)
    if M0 is None:
        return np.zeros((n, n))
    M0 = np.asarray(M0)
    if M0.shape != (n, n):
        raise DataError(f"prior matrix must be {n}x{n}, got {M0.shape}")
    if np.any((M0 != 0) & ~allowed):
        bad = [tuple(int(k) for k in ij) for ij in np.argwhere((M0 != 0) & ~allowed)[:5]]
        raise DataError(f"prior has edges in structurally excluded positions, e.g. {bad}")
    return np.where(allowed, np.where(M0 != 0, hi, lo), 0.0)
