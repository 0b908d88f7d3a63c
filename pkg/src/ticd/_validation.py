"""Input checks shared by the estimator front end."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .data import RegimeDataset
from .exceptions import DataError

__all__ = ["check_series", "check_labels", "as_regime_dataset", "check_family"]


def check_series(X, p: int, d: int | None = None, name: str = "X") -> np.ndarray:
    """2-D finite float array with more than ``p`` rows (and ``d`` columns)."""
    try:
        X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True,
                        ensure_min_samples=p + 1, input_name=name)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if d is not None and X.shape[1] != d:
        raise DataError(f"{name} has {X.shape[1]} columns, expected {d}")
    return X


def check_labels(y, n_rows: int) -> np.ndarray:
    """Regime label per row: non-negative integers covering ``0..Q-1``."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_rows:
        raise DataError(f"regime labels must be a 1-D array of length {n_rows}, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("regime labels must be integers")
        y = y.astype(int)
    if y.size and y.min() < 0:
        raise DataError("regime labels must be non-negative")
    present = np.unique(y)
    if present.size and not np.array_equal(present, np.arange(present.size)):
        missing = sorted(set(range(int(present.max()) + 1)) - set(present.tolist()))
        raise DataError(f"regime labels must cover 0..Q-1; missing {missing}")
    return y


def _runs(labels: np.ndarray):
    """(label, start, stop) for every maximal run of equal labels."""
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.r_[0, cuts]
    stops = np.r_[cuts, len(labels)]
    return [(int(labels[a]), int(a), int(b)) for a, b in zip(starts, stops)]


def as_regime_dataset(X, y=None, p: int = 1, variable_names=None) -> RegimeDataset:
    """Coerce estimator input into a :class:`RegimeDataset`.

    Accepted forms: a dataset (``y`` must be ``None``); a list of per-regime
    series; or one ``(T, d)`` array with a regime label per row, where every
    contiguous run of one label becomes a segment of that regime.
    """
    if isinstance(X, RegimeDataset):
        if y is not None:
            raise DataError("labels cannot be combined with a RegimeDataset input")
        if X.p != p:
            raise DataError(f"dataset has lag {X.p}, estimator expects p={p}")
        return X
    if isinstance(X, (list, tuple)):
        if y is not None:
            raise DataError("labels cannot be combined with a list of regime series")
        if not X:
            raise DataError("at least one regime series is required")
        series = [check_series(s, p, name=f"regime {q}") for q, s in enumerate(X)]
        d = series[0].shape[1]
        for q, s in enumerate(series):
            if s.shape[1] != d:
                raise DataError(f"regime {q} has {s.shape[1]} columns, expected {d}")
        return RegimeDataset.from_series(series, p, variable_names)
    X = check_series(X, p)
    d = X.shape[1]
    names = variable_names or [f"x{j + 1}" for j in range(d)]
    if y is None:
        return RegimeDataset(d, p, names, [[X]])
    y = check_labels(y, len(X))
    segments = [[] for _ in range(int(y.max()) + 1)]
    for q, a, b in _runs(y):
        if b - a <= p:
            raise DataError(f"regime {q} run at rows {a}..{b - 1} is too short for lag {p}")
        segments[q].append(X[a:b])
    return RegimeDataset(d, p, names, segments)


def check_family(family, Q: int, d: int) -> list[list[int]]:
    if family is None:
        raise DataError("known-targets mode needs the target family")
    family = [sorted(int(j) for j in t) for t in family]
    if len(family) != Q:
        raise DataError(f"target family has {len(family)} regimes, data has {Q}")
    if family[0]:
        raise DataError("regime 0 is observational; its target set must be empty")
    for q, t in enumerate(family):
        for j in t:
            if not 0 <= j < d:
                raise DataError(f"regime {q}: target {j} outside 0..{d - 1}")
    return family
