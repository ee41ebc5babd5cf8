"""Full-batch training of the mixture model and a plain Cox baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import SurvivalDataset
from .evaluation import ConcordanceTracker, TiePolicy
from .models import MoCEModel, log_hazard_hard
from .objectives import ObjectiveKind, cph_gradient, cph_partial_loglik, objective_and_grad
from .optim import OptimizerKind, OptimizerState, step


class DivergenceError(FloatingPointError):
    """Training produced non-finite values; ``model`` is the last finite state."""

    def __init__(self, message, model, epoch, history):
        super().__init__(message)
        self.model = model
        self.epoch = epoch
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveKind = ObjectiveKind.ELBO
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-3
    epochs: int = 4000
    l2_experts: float = 0.01
    seed: int = 0
    patience: int | None = None
    init_scale: float = 0.1
    tie_policy: TiePolicy = TiePolicy.STRICT

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind(self.objective))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "tie_policy", TiePolicy(self.tie_policy))
        if self.objective is ObjectiveKind.EXACT:
            raise ValueError("the exact objective is a test oracle and cannot be trained")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.l2_experts < 0:
            raise ValueError("l2_experts must be nonnegative")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass
class History:
    """Per-epoch records; extra tracked datasets get their own concordance column."""

    epoch: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    val_concordance: list = field(default_factory=list)
    tracked: dict = field(default_factory=dict)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.epoch)

    def columns(self):
        cols = {"epoch": self.epoch, "objective": self.objective, "val_concordance": self.val_concordance}
        cols.update({f"{k}_concordance": v for k, v in self.tracked.items()})
        return cols


def _hard_scores(m, ds):
    # concordance depends only on ranks, so log hazards avoid overflow
    return log_hazard_hard(m, ds.X)


def train(model: MoCEModel, train_ds: SurvivalDataset, val_ds: SurvivalDataset | None,
          cfg: TrainConfig, track: dict | None = None):
    """Maximize the configured objective with full-batch gradient ascent.

    Each epoch evaluates the objective and gradient at the current
    parameters, takes one optimizer step, then scores hard-gating concordance
    on the validation set. The returned model is the snapshot with the best
    validation concordance (the final one when no validation set is given).
    ``track`` maps names to extra datasets scored every epoch.

    Raises :class:`DivergenceError` when the objective, a gradient or a
    predicted hazard becomes non-finite.
    """
    if not train_ds.event.any():
        raise ValueError("training set has no uncensored subjects")
    val_tracker = ConcordanceTracker(val_ds, cfg.tie_policy) if val_ds is not None else None
    trackers = {k: (ds, ConcordanceTracker(ds, cfg.tie_policy)) for k, ds in (track or {}).items()}
    hist = History(tracked={k: [] for k in trackers})
    names = model.parameter_names()
    params = [p.copy() for p in model.parameters()]
    state = OptimizerState.create(cfg.optimizer, params, cfg.learning_rate)
    current = model
    best, best_score, since_best = model, -np.inf, 0

    for epoch in range(1, cfg.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            value, grads = objective_and_grad(current, train_ds, cfg.objective, cfg.l2_experts)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(f"non-finite objective or gradient at epoch {epoch}", current, epoch, hist)
        params, state = step(state, params, grads, names)
        candidate = current.with_parameters(params)
        monitor = val_ds if val_ds is not None else train_ds
        with np.errstate(over="ignore", invalid="ignore"):
            risk = np.exp(_hard_scores(candidate, monitor))
        if not np.all(np.isfinite(risk)):
            raise DivergenceError(f"predicted hazards overflowed at epoch {epoch}", current, epoch, hist)
        current = candidate

        hist.epoch.append(epoch)
        hist.objective.append(value)
        if val_tracker is not None:
            score = val_tracker(_hard_scores(current, val_ds))
            hist.val_concordance.append(score)
            if score > best_score:
                best, best_score, since_best = current, score, 0
                hist.best_epoch = epoch
            else:
                since_best += 1
        else:
            hist.val_concordance.append(float("nan"))
            best, hist.best_epoch = current, epoch
        for k, (ds, tracker) in trackers.items():
            hist.tracked[k].append(tracker(_hard_scores(current, ds)))
        if cfg.patience is not None and since_best >= cfg.patience:
            hist.stopped_early = True
            break
    return best, hist


def fit_cph(ds: SurvivalDataset, l2: float = 0.0) -> np.ndarray:
    """Maximum partial-likelihood Cox coefficients (optionally ridge-penalized)."""

    def negll(beta):
        return -cph_partial_loglik(beta, ds) + l2 * beta @ beta

    def neggrad(beta):
        return -cph_gradient(beta, ds) + 2 * l2 * beta

    res = minimize(negll, np.zeros(ds.dim), jac=neggrad, method="L-BFGS-B")
    return res.x
