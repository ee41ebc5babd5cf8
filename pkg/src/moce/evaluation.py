"""Concordance index with censoring-aware comparable pairs, and bootstrap bands."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset

BOOTSTRAP_SAMPLES = 250


class TiePolicy(str, enum.Enum):
    STRICT = "strict"
    HALF = "half"


class NoComparablePairsError(ValueError):
    pass


@dataclass(frozen=True)
class ConcordanceResult:
    c_index: float
    n_comparable: int
    n_concordant: int
    n_tied_predictions: int


def comparable_pairs(ds: SurvivalDataset) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` with ``i`` an observed event strictly before ``t_j``."""
    i, j = _pair_arrays(ds.time, ds.event)
    return list(zip(i.tolist(), j.tolist()))


def _pair_arrays(time, event):
    ev = np.flatnonzero(event)
    ii, jj = [], []
    for i in ev:
        later = np.flatnonzero(time > time[i])
        ii.append(np.full(later.size, i))
        jj.append(later)
    if not ii:
        return np.empty(0, int), np.empty(0, int)
    return np.concatenate(ii), np.concatenate(jj)


def _counts(hazards, time, event, chunk_elems=4_000_000):
    """(comparable, concordant, tied) counts without materializing all pairs."""
    hazards = np.asarray(hazards, dtype=float)
    ev = np.flatnonzero(event)
    n = time.size
    step = max(1, chunk_elems // max(n, 1))
    comp = conc = tied = 0
    for start in range(0, ev.size, step):
        idx = ev[start:start + step]
        later = time[None, :] > time[idx, None]
        hi, hj = hazards[idx, None], hazards[None, :]
        comp += int(later.sum())
        conc += int((later & (hi > hj)).sum())
        tied += int((later & (hi == hj)).sum())
    return comp, conc, tied


def _result(comp, conc, tied, tie_policy):
    if comp == 0:
        raise NoComparablePairsError("no comparable pairs; concordance is undefined")
    credit = conc + (0.5 * tied if tie_policy is TiePolicy.HALF else 0.0)
    return ConcordanceResult(credit / comp, comp, conc, tied)


def concordance_index(hazards, ds: SurvivalDataset, tie_policy=TiePolicy.STRICT) -> ConcordanceResult:
    """Fraction of comparable pairs where the earlier event has the higher hazard.

    Under ``STRICT`` only strictly greater hazards count; ``HALF`` adds half
    credit for exactly tied hazards (Harrell's convention).
    """
    tie_policy = TiePolicy(tie_policy)
    hazards = np.asarray(hazards, dtype=float).reshape(-1)
    if hazards.size != ds.n:
        raise ValueError(f"got {hazards.size} hazards for {ds.n} subjects")
    return _result(*_counts(hazards, ds.time, ds.event), tie_policy)


class ConcordanceTracker:
    """Caches a dataset's comparable pairs for repeated scoring (e.g. every epoch)."""

    def __init__(self, ds: SurvivalDataset, tie_policy=TiePolicy.STRICT):
        self.tie_policy = TiePolicy(tie_policy)
        self.i, self.j = _pair_arrays(ds.time, ds.event)
        self.n = ds.n
        if self.i.size == 0:
            raise NoComparablePairsError("no comparable pairs; concordance is undefined")

    def __call__(self, hazards) -> float:
        hi, hj = hazards[self.i], hazards[self.j]
        conc = np.count_nonzero(hi > hj)
        if self.tie_policy is TiePolicy.HALF:
            return (conc + 0.5 * np.count_nonzero(hi == hj)) / self.i.size
        return conc / self.i.size


@dataclass(frozen=True)
class BootstrapBand:
    point: float
    samples: np.ndarray
    lower: float
    upper: float
    seed: int

    @property
    def B(self) -> int:
        return len(self.samples)


def bootstrap_ci(hazards, ds: SurvivalDataset, B: int = BOOTSTRAP_SAMPLES, seed: int = 0,
                 tie_policy=TiePolicy.STRICT, level: float = 0.95) -> BootstrapBand:
    """Percentile bootstrap band for the c-index, resampling subjects with replacement.

    Resample ``b`` draws from its own stream seeded by ``(seed, b)``. Resamples
    with no comparable pairs are redrawn from the same stream.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap samples")
    tie_policy = TiePolicy(tie_policy)
    hazards = np.asarray(hazards, dtype=float).reshape(-1)
    point = concordance_index(hazards, ds, tie_policy).c_index
    n = ds.n
    samples = np.empty(B)
    degenerate = 0
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        while True:
            idx = rng.integers(0, n, size=n)
            comp, conc, tied = _counts(hazards[idx], ds.time[idx], ds.event[idx])
            if comp:
                samples[b] = _result(comp, conc, tied, tie_policy).c_index
                degenerate = 0
                break
            degenerate += 1
            if degenerate > 100 * B:
                raise RuntimeError(f"{degenerate} consecutive bootstrap resamples had no comparable pairs")
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(samples, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapBand(point, samples, float(lower), float(upper), seed)
