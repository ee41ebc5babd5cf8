"""Partial-likelihood objectives for the mixture of Cox experts.

Three per-subject objectives are provided for an uncensored anchor ``i``
with risk set R(i):

* ``exact_loglik``: the marginal log partial likelihood, summing over every
  joint expert assignment of the risk set (exponential cost, test oracle).
* ``rt_objective``: ratio of expectations, log E[e^{s_i}] - log sum_j E[e^{s_j}].
* ``elbo``: E[s_i] - log sum_j E[e^{s_j}], a lower bound on both of the above.

Gating is treated as independent per subject, so every expectation is over
that subject's own softmax distribution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset, risk_set
from .models import LOG_FLOOR, MoCEModel, log_softmax

ENUMERATION_CAP = 10**6


class ObjectiveKind(str, enum.Enum):
    EXACT = "exact"
    RT = "rt"
    ELBO = "elbo"


class IntractableError(ValueError):
    pass


def _logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def _require_event(ds, i):
    if not 0 <= i < ds.n:
        raise IndexError(f"subject index {i} out of range for n={ds.n}")
    if not ds.event[i]:
        raise ValueError(f"subject {i} is censored; objectives are defined for observed events only")


def _check_dim(m: MoCEModel, ds: SurvivalDataset):
    if m.dim != ds.dim:
        raise ValueError(f"model dimension {m.dim} does not match dataset dimension {ds.dim}")


def _subject_terms(m: MoCEModel, X):
    """Per-row log gating probs, expert scores and log E[exp(score)]."""
    logp = np.maximum(log_softmax(m.gating_logits(X)), LOG_FLOOR)
    S = m.scores(X)
    logm = _logsumexp(logp + S, axis=1)
    return logp, S, logm


def cph_partial_loglik(beta, ds: SurvivalDataset) -> float:
    """Cox log partial likelihood, summed over uncensored subjects."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != ds.dim:
        raise ValueError(f"beta has length {beta.shape[0]}, dataset dimension is {ds.dim}")
    s = ds.X @ beta
    logden = _risk_logsumexp(ds, s)
    return float(np.sum((s - logden)[ds.event]))


def cph_term(beta, ds: SurvivalDataset, i: int) -> float:
    """Subject ``i``'s contribution to the Cox log partial likelihood."""
    _require_event(ds, i)
    members = risk_set(ds, i).members
    s = ds.X[members] @ np.asarray(beta, dtype=float).reshape(-1)
    return float(ds.X[i] @ np.asarray(beta, dtype=float).reshape(-1) - _logsumexp(s))


def cph_gradient(beta, ds: SurvivalDataset) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    s = ds.X @ beta
    logden = _risk_logsumexp(ds, s)
    g_s = ds.event.astype(float) - np.exp(s + _event_weight_logcum(ds, logden))
    return g_s @ ds.X


def _risk_logsumexp(ds: SurvivalDataset, logv: np.ndarray) -> np.ndarray:
    """log sum_{j in R(i)} exp(logv_j) for every subject i."""
    rev = np.logaddexp.accumulate(logv[ds.sorted_order][::-1])[::-1]
    return rev[ds.risk_start()]


def _event_weight_logcum(ds: SurvivalDataset, logden: np.ndarray) -> np.ndarray:
    """For each subject j: log sum over events i with j in R(i) of exp(-logden_i)."""
    start = ds.risk_start()
    acc = np.full(ds.n, -np.inf)
    ev = np.flatnonzero(ds.event)
    np.logaddexp.at(acc, start[ev], -logden[ev])
    cum = np.logaddexp.accumulate(acc)
    out = np.empty(ds.n)
    out[ds.sorted_order] = cum
    return out


def exact_loglik(m: MoCEModel, ds: SurvivalDataset, i: int, cap: int = ENUMERATION_CAP) -> float:
    """Marginal log partial likelihood by enumerating all K^|R(i)| assignments."""
    _check_dim(m, ds)
    _require_event(ds, i)
    members = risk_set(ds, i).members
    size = members.size
    if float(m.K) ** size > cap:
        raise IntractableError(
            f"exact marginalization needs K^|R| = {m.K}^{size} = {float(m.K) ** size:.3g} terms (cap {cap})"
        )
    logp, S, _ = _subject_terms(m, ds.X[members])
    anchor = int(np.flatnonzero(members == i)[0])
    # rows enumerate assignments z in lexicographic order
    Z = np.indices((m.K,) * size).reshape(size, -1).T
    cols = np.arange(size)
    logw = logp[cols, Z].sum(axis=1)
    Sz = S[cols, Z]
    terms = logw + Sz[:, anchor] - _logsumexp(Sz, axis=1)
    return float(_logsumexp(terms))


def rt_objective(m: MoCEModel, ds: SurvivalDataset, i: int) -> float:
    """Log of the ratio-of-expectations approximation for subject ``i``."""
    _check_dim(m, ds)
    _require_event(ds, i)
    members = risk_set(ds, i).members
    _, _, logm = _subject_terms(m, ds.X[members])
    anchor = int(np.flatnonzero(members == i)[0])
    return float(logm[anchor] - _logsumexp(logm))


def elbo(m: MoCEModel, ds: SurvivalDataset, i: int) -> float:
    """Variational lower bound for subject ``i``."""
    _check_dim(m, ds)
    _require_event(ds, i)
    members = risk_set(ds, i).members
    logp, S, logm = _subject_terms(m, ds.X[members])
    anchor = int(np.flatnonzero(members == i)[0])
    expected_score = float(np.exp(logp[anchor]) @ S[anchor])
    return expected_score - float(_logsumexp(logm))


@dataclass(frozen=True)
class PhiDecomposition:
    """Gating moments of ``exp(beta_z @ x)`` over subject ``i``'s risk set.

    ``A``/``C`` are the anchor's mean/variance, ``B``/``D`` the sums of
    means/variances over the risk set (anchor included). ``phi`` is the
    correction factor as printed; ``taylor`` is the second-order estimate of
    E[X/Y] with X the anchor's relative risk and Y the risk-set total.
    """

    A: float
    B: float
    C: float
    D: float
    phi: float
    taylor: float

    @property
    def rt_ratio(self) -> float:
        return self.A / self.B


def phi_decomposition(m: MoCEModel, ds: SurvivalDataset, i: int) -> PhiDecomposition:
    _check_dim(m, ds)
    _require_event(ds, i)
    members = risk_set(ds, i).members
    logp, S, _ = _subject_terms(m, ds.X[members])
    p = np.exp(logp)
    E = np.exp(S)
    mean = (p * E).sum(axis=1)
    # variance as E[(e - mean)^2] avoids cancellation when one expert dominates
    var = (p * (E - mean[:, None]) ** 2).sum(axis=1)
    anchor = int(np.flatnonzero(members == i)[0])
    A, C = float(mean[anchor]), float(var[anchor])
    B, D = float(mean.sum()), float(var.sum())
    phi = 1.0 - (1.0 / B) * (1.0 - (D / B - C / A))
    # Cov(X, Y) = Var(X) since only the anchor's own term in Y depends on z_i
    taylor = (A / B) * (1.0 - C / (A * B) + D / B**2)
    return PhiDecomposition(A, B, C, D, phi, taylor)


def _forward(m: MoCEModel, ds: SurvivalDataset, kind: ObjectiveKind):
    logits, cache = m.gating.forward(ds.X)
    logp = np.maximum(log_softmax(logits), LOG_FLOOR)
    S = m.scores(ds.X)
    logq = logp + S
    logm = _logsumexp(logq, axis=1)
    logden = _risk_logsumexp(ds, logm)
    p = np.exp(logp)
    if kind is ObjectiveKind.ELBO:
        numer = (p * S).sum(axis=1)
    elif kind is ObjectiveKind.RT:
        numer = logm
    else:
        raise ValueError(f"vectorized path does not support {kind}")
    return dict(cache=cache, p=p, S=S, logq=logq, logm=logm, logden=logden, numer=numer)


def per_subject_objective(m: MoCEModel, ds: SurvivalDataset, kind) -> np.ndarray:
    """Objective value for every subject (NaN for censored subjects)."""
    kind = ObjectiveKind(kind)
    _check_dim(m, ds)
    if kind is ObjectiveKind.EXACT:
        out = np.full(ds.n, np.nan)
        for i in np.flatnonzero(ds.event):
            out[i] = exact_loglik(m, ds, int(i))
        return out
    f = _forward(m, ds, kind)
    return np.where(ds.event, f["numer"] - f["logden"], np.nan)


def total_objective(m: MoCEModel, ds: SurvivalDataset, kind=ObjectiveKind.ELBO, l2: float = 0.0) -> float:
    """Sum of per-subject objectives over events minus ``l2 * ||betas||_F^2``."""
    if not ds.event.any():
        raise ValueError("dataset has no uncensored subjects")
    vals = per_subject_objective(m, ds, kind)
    return float(np.sum(vals[ds.event])) - l2 * float(np.sum(m.experts.betas**2))


def objective_and_grad(m: MoCEModel, ds: SurvivalDataset, kind=ObjectiveKind.ELBO, l2: float = 0.0):
    """Total objective and its gradient, aligned with ``m.parameters()``."""
    kind = ObjectiveKind(kind)
    if kind is ObjectiveKind.EXACT:
        raise ValueError("gradients are only available for the RT and ELBO objectives")
    _check_dim(m, ds)
    if not ds.event.any():
        raise ValueError("dataset has no uncensored subjects")
    f = _forward(m, ds, kind)
    ev = ds.event
    B = m.experts.betas
    value = float(np.sum((f["numer"] - f["logden"])[ev])) - l2 * float(np.sum(B**2))

    p, S, logm = f["p"], f["S"], f["logm"]
    r = np.exp(f["logq"] - logm[:, None])
    # denominators: d/d log m_j = -sum_{i in E, j in R(i)} m_j / den_i
    g_logm = -np.exp(logm + _event_weight_logcum(ds, f["logden"]))
    G_S = g_logm[:, None] * r
    G_U = g_logm[:, None] * (r - p)
    e = ev[:, None].astype(float)
    if kind is ObjectiveKind.ELBO:
        G_S += e * p
        G_U += e * p * (S - f["numer"][:, None])
    else:
        G_S += e * r
        G_U += e * (r - p)
    grad_B = G_S.T @ ds.X - 2.0 * l2 * B
    grad_gating = m.gating.backward(f["cache"], G_U)
    return value, [grad_B, *grad_gating]


def grad_total_objective(m: MoCEModel, ds: SurvivalDataset, kind=ObjectiveKind.ELBO, l2: float = 0.0):
    return objective_and_grad(m, ds, kind, l2)[1]
