"""Survival datasets: loading, risk sets, preprocessing and synthetic generation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent survival data."""


class TiedTimesError(DataError):
    pass


class Subject(NamedTuple):
    covariates: np.ndarray
    event_time: float
    event_observed: bool


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable collection of (covariates, event indicator, time) triplets.

    ``X`` is ``(n, d)``; ``time`` holds positive event/censoring times and
    ``event`` is True where the event was observed (False = right-censored).
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: tuple[str, ...] = ()
    sorted_order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        time = np.array(self.time, dtype=float).reshape(-1)
        event = np.array(self.event, dtype=bool).reshape(-1)
        if X.shape[0] != time.shape[0] or time.shape[0] != event.shape[0]:
            raise DataError(
                f"row counts disagree: X {X.shape[0]}, time {time.shape[0]}, event {event.shape[0]}"
            )
        if X.shape[1] < 1:
            raise DataError("dataset needs at least one covariate")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DataError("event times must be finite and positive")
        names = tuple(self.feature_names) or tuple(f"x{k}" for k in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match covariate dimension")
        order = np.argsort(time, kind="stable")
        for arr in (X, time, event, order):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "sorted_order", order)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def subject(self, i: int) -> Subject:
        return Subject(self.X[i], float(self.time[i]), bool(self.event[i]))

    @property
    def has_ties(self) -> bool:
        st = self.time[self.sorted_order]
        return bool(np.any(st[1:] == st[:-1]))

    def risk_start(self) -> np.ndarray:
        """Position in ``sorted_order`` where each subject's risk set begins."""
        st = self.time[self.sorted_order]
        return np.searchsorted(st, self.time, side="left")

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx, dtype=int)
        return SurvivalDataset(self.X[idx], self.time[idx], self.event[idx], self.feature_names)

    def with_covariates(self, X) -> "SurvivalDataset":
        return SurvivalDataset(X, self.time, self.event, self.feature_names)


@dataclass(frozen=True)
class RiskSet:
    anchor: int
    members: np.ndarray

    def __len__(self):
        return len(self.members)

    def __contains__(self, j):
        return bool(np.any(self.members == j))


def risk_set(ds: SurvivalDataset, i: int) -> RiskSet:
    """Subjects still under observation at subject ``i``'s time: ``{j : t_j >= t_i}``."""
    if not 0 <= i < ds.n:
        raise IndexError(f"subject index {i} out of range for n={ds.n}")
    st = ds.time[ds.sorted_order]
    start = int(np.searchsorted(st, ds.time[i], side="left"))
    return RiskSet(int(i), np.sort(ds.sorted_order[start:]))


def check_ties(ds: SurvivalDataset):
    if ds.has_ties:
        st = ds.time[ds.sorted_order]
        dup = np.unique(st[1:][st[1:] == st[:-1]])
        shown = ", ".join(repr(float(v)) for v in dup[:5])
        raise TiedTimesError(
            f"{dup.size} tied event time value(s) (e.g. {shown}); pass a jitter to break ties"
        )


def jitter_ties(ds: SurvivalDataset, eps: float, seed: int = 0) -> SurvivalDataset:
    """Break exact time ties with positive perturbations of at most ``eps`` times the
    smallest positive gap between distinct times.

    For ``eps < 0.5`` the relative order of originally distinct times is kept.
    """
    if not 0 < eps < 0.5:
        raise DataError("jitter eps must lie in (0, 0.5)")
    uniq = np.unique(ds.time)
    gaps = np.diff(uniq)
    gap = float(gaps.min()) if gaps.size else float(uniq[0])
    rng = np.random.default_rng([seed, 0x7175])
    u = rng.uniform(0.0, 1.0, size=ds.n)
    # only tied subjects move; u in (0, 1] keeps times strictly positive
    _, inverse, counts = np.unique(ds.time, return_inverse=True, return_counts=True)
    tied = counts[inverse] > 1
    time = ds.time + np.where(tied, (1.0 - u) * eps * gap, 0.0)
    out = SurvivalDataset(ds.X, time, ds.event, ds.feature_names)
    check_ties(out)
    return out


def load_csv(
    path,
    time_col: str = "time",
    event_col: str = "event",
    feature_cols: Sequence[str] | None = None,
    jitter: float = 0.0,
    jitter_seed: int = 0,
) -> SurvivalDataset:
    """Read a comma-separated file with a header row into a dataset.

    Feature columns default to every column other than the time and event
    columns, in file order. Exact ties in time raise :class:`TiedTimesError`
    unless ``jitter`` is positive.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    for col in (time_col, event_col, *(feature_cols or ())):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    if feature_cols is None:
        feature_cols = [h for h in header if h not in (time_col, event_col)]
    if not feature_cols:
        raise DataError(f"{path}: no feature columns")
    pos = {h: k for k, h in enumerate(header)}

    def cell(r, lineno, col):
        try:
            return float(r[pos[col]])
        except (ValueError, IndexError):
            val = r[pos[col]] if pos[col] < len(r) else ""
            raise DataError(f"{path}: row {lineno}, column {col!r}: cannot parse {val!r}") from None

    X = np.empty((len(rows), len(feature_cols)))
    time = np.empty(len(rows))
    event = np.empty(len(rows), dtype=bool)
    for k, r in enumerate(rows):
        lineno = k + 2
        for c, col in enumerate(feature_cols):
            X[k, c] = cell(r, lineno, col)
        t = cell(r, lineno, time_col)
        if not t > 0 or not math.isfinite(t):
            raise DataError(f"{path}: row {lineno}: time must be positive, got {t!r}")
        e = cell(r, lineno, event_col)
        if e not in (0.0, 1.0):
            raise DataError(f"{path}: row {lineno}: event must be 0 or 1, got {r[pos[event_col]]!r}")
        time[k] = t
        event[k] = e == 1.0
    if not rows:
        raise DataError(f"{path}: no data rows")
    ds = SurvivalDataset(X, time, event, tuple(feature_cols))
    if jitter > 0:
        return jitter_ties(ds, jitter, jitter_seed)
    check_ties(ds)
    return ds


def write_csv(ds: SurvivalDataset, path, time_col: str = "time", event_col: str = "event"):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, time_col, event_col])
        for k in range(ds.n):
            w.writerow([*(repr(float(v)) for v in ds.X[k]), repr(float(ds.time[k])), int(ds.event[k])])


class ZeroVarianceError(DataError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"zero-variance feature(s) at index {self.indices}")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray

    def apply(self, ds: SurvivalDataset) -> SurvivalDataset:
        X = (ds.X[:, self.keep] - self.mean) / self.std
        names = tuple(n for n, k in zip(ds.feature_names, self.keep) if k)
        return SurvivalDataset(X, ds.time, ds.event, names)


def standardize(ds: SurvivalDataset, drop_constant: bool = False):
    """Center each feature and scale to unit sample (n-1) standard deviation.

    Returns the transformed dataset and a :class:`Standardizer` holding the
    statistics, so the identical transform can be applied to held-out data.
    Constant features raise :class:`ZeroVarianceError` unless
    ``drop_constant`` is set, in which case they are removed.
    """
    if ds.n < 2:
        raise DataError("standardize needs at least two subjects")
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0, ddof=1)
    zero = np.flatnonzero(std == 0)
    if zero.size and not drop_constant:
        raise ZeroVarianceError(zero)
    keep = std > 0
    if not keep.any():
        raise ZeroVarianceError(zero)
    st = Standardizer(mean[keep], std[keep], keep)
    return st.apply(ds), st


def split(ds: SurvivalDataset, train_frac: float, val_frac: float, seed: int, allow_empty_val: bool = False):
    """Shuffle subjects with ``seed`` and cut into (train, validation, test).

    Train and validation sizes are ``train_frac * n`` and ``val_frac * n``
    rounded half up; the test split takes the remainder. An empty validation split is only allowed with
    ``allow_empty_val``, in which case ``None`` is returned in its place.
    """
    if not (0 < train_frac < 1) or not (0 <= val_frac < 1) or train_frac + val_frac >= 1:
        raise DataError(f"invalid split fractions train={train_frac}, val={val_frac}")
    n = ds.n
    n_train = int(math.floor(train_frac * n + 0.5))
    n_val = int(math.floor(val_frac * n + 0.5))
    n_test = n - n_train - n_val
    if n_train == 0:
        raise DataError("empty training split")
    if n_test <= 0:
        raise DataError("empty test split")
    if n_val == 0 and not allow_empty_val:
        raise DataError("empty validation split (use the no-validation option to allow it)")
    perm = np.random.default_rng(seed).permutation(n)
    tr, va, te = perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    val = ds.subset(np.sort(va)) if n_val else None
    return ds.subset(np.sort(tr)), val, ds.subset(np.sort(te))


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int
    dim: int
    true_experts: np.ndarray
    true_gating: np.ndarray
    censoring_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        experts = np.array(self.true_experts, dtype=float, ndmin=2)
        gating = np.array(self.true_gating, dtype=float, ndmin=2)
        if self.n_subjects < 1 or self.dim < 1:
            raise DataError("n_subjects and dim must be positive")
        if experts.shape[1] != self.dim or gating.shape != experts.shape:
            raise DataError(f"expected K*x{self.dim} expert and gating matrices")
        if not 0 <= self.censoring_fraction < 1:
            raise DataError("censoring_fraction must lie in [0, 1)")
        object.__setattr__(self, "true_experts", experts)
        object.__setattr__(self, "true_gating", gating)

    @property
    def n_true_experts(self) -> int:
        return self.true_experts.shape[0]


def planted_spec(n_subjects, dim, n_true_experts=2, censoring_fraction=0.2, seed=0,
                 gate_scale=4.0, expert_scale=1.0) -> SyntheticSpec:
    """Build a spec with well-separated gating and distinct expert directions.

    Gating rows are scaled random directions; each expert is a random direction
    of norm ``expert_scale``, so with ``K* = 2`` the two experts typically
    rank subjects very differently.
    """
    rng = np.random.default_rng([seed, 0x5eed])
    G = rng.standard_normal((n_true_experts, dim))
    G *= gate_scale / np.linalg.norm(G, axis=1, keepdims=True)
    if n_true_experts == 1:
        G[:] = 0.0
    B = rng.standard_normal((n_true_experts, dim))
    B *= expert_scale / np.linalg.norm(B, axis=1, keepdims=True)
    return SyntheticSpec(n_subjects, dim, B, G, censoring_fraction, seed)


def generate_synthetic(spec: SyntheticSpec) -> SurvivalDataset:
    """Sample covariates, a latent expert per subject, and exponential event times.

    Covariates are standard normal; the expert is drawn from the softmax of
    ``true_gating @ x``; the event time is exponential with rate
    ``exp(true_experts[k] @ x)``. A ``censoring_fraction`` share of subjects
    is censored at a uniform time before their event.
    """
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_subjects, spec.dim
    X = rng.standard_normal((n, d))
    logits = X @ spec.true_gating.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.uniform(size=n)
    z = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), spec.n_true_experts - 1)
    rate = np.exp(np.einsum("nd,nd->n", X, spec.true_experts[z]))
    time = rng.exponential(size=n) / rate
    event = np.ones(n, dtype=bool)
    n_cens = int(round(spec.censoring_fraction * n))
    cens = rng.choice(n, size=n_cens, replace=False)
    time[cens] *= rng.uniform(size=n_cens)
    event[cens] = False
    # uniform(0, 1) can return 0.0
    time = np.maximum(time, np.finfo(float).tiny)
    return SurvivalDataset(X, time, event)
