"""End-to-end drivers used by the command line: train, compare, eval, checks."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import models
from .config import RunConfig
from .data import (
    DataError,
    Standardizer,
    SurvivalDataset,
    generate_synthetic,
    load_csv,
    planted_spec,
    split,
    standardize,
    write_csv,
)
from .evaluation import bootstrap_ci, concordance_index
from .models import MoCEModel, init_model, log_hazard_hard, log_hazard_soft, softmax
from .objectives import (
    ObjectiveKind,
    cph_term,
    elbo,
    exact_loglik,
    objective_and_grad,
    phi_decomposition,
    rt_objective,
    total_objective,
)
from .optim import finite_diff_grad, max_relative_error
from .training import fit_cph, train

GRADCHECK_THRESHOLD = 1e-4
BOUND_SLACK = 1e-9
DEGENERACY_TOL = 1e-12
SHARP_GATING = 0.999


@dataclass
class Splits:
    train: SurvivalDataset
    val: SurvivalDataset | None
    test: SurvivalDataset
    standardizer: Standardizer | None


def _seed(cfg_seed, *stream):
    return [int(cfg_seed), *stream]


def load_dataset(cfg: RunConfig) -> SurvivalDataset:
    if cfg.is_synthetic:
        spec = planted_spec(cfg.synthetic_n, cfg.synthetic_dim, cfg.synthetic_experts,
                            cfg.synthetic_censoring, cfg.synthetic_seed)
        return generate_synthetic(spec)
    return load_csv(cfg.data, cfg.time_col, cfg.event_col, jitter=cfg.jitter, jitter_seed=cfg.seed)


def holdout(ds: SurvivalDataset, val_frac: float, seed):
    """Split into (train, validation); validation is ``floor(val_frac * n)`` subjects."""
    n_val = int(math.floor(val_frac * ds.n))
    if n_val == 0:
        return ds, None
    if n_val >= ds.n:
        raise DataError("validation fraction leaves no training data")
    perm = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def prepare(cfg: RunConfig) -> Splits:
    """Load, split and (optionally) standardize with training-set statistics."""
    ds = load_dataset(cfg)
    if cfg.test_data:
        # external test file: the main data only feeds training and validation
        te = load_csv(cfg.test_data, cfg.time_col, cfg.event_col, ds.feature_names,
                      jitter=cfg.jitter, jitter_seed=cfg.seed)
        tr, va = holdout(ds, 0.0 if cfg.no_validation else cfg.val_frac, _seed(cfg.seed, 1))
    else:
        tr, va, te = split(ds, cfg.train_frac, 0.0 if cfg.no_validation else cfg.val_frac,
                           _seed(cfg.seed, 1), allow_empty_val=cfg.no_validation)
    st = None
    if cfg.standardize:
        tr, st = standardize(tr)
        va = st.apply(va) if va is not None else None
        te = st.apply(te)
    return Splits(tr, va, te, st)


def new_model(cfg: RunConfig, dim: int, restart: int = 0) -> MoCEModel:
    return init_model(dim, cfg.n_experts, cfg.hidden, cfg.activation, cfg.init_scale,
                      _seed(cfg.seed, 2, restart))


# -- file writers ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns: dict):
    keys = list(columns)
    rows = zip(*columns.values())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_record(path, record: dict):
    def norm(v):
        if isinstance(v, (float, np.floating)):
            return None if math.isnan(v) else float(v)
        if isinstance(v, (np.integer, np.bool_)):
            return v.item()
        return v

    clean = {k: norm(v) for k, v in record.items()}
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_standardizer(path, st: Standardizer, names):
    write_table(path, {"feature": list(names), "mean": list(st.mean), "std": list(st.std)})


def read_standardizer(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return ([r["feature"] for r in rows], np.array([float(r["mean"]) for r in rows]),
            np.array([float(r["std"]) for r in rows]))


def _band_record(prefix, band, record):
    record[f"{prefix}"] = band.point
    record[f"{prefix}_lower"] = band.lower
    record[f"{prefix}_upper"] = band.upper


def evaluate(model: MoCEModel, ds: SurvivalDataset, cfg: RunConfig, prefix="test") -> dict:
    """Hard- and soft-gating c-index with bootstrap bands."""
    rec = {}
    for gating, fn in (("hard", log_hazard_hard), ("soft", log_hazard_soft)):
        band = bootstrap_ci(fn(model, ds.X), ds, cfg.bootstrap, cfg.seed, cfg.tie_policy)
        _band_record(f"{prefix}_c_index_{gating}", band, rec)
    rec[f"{prefix}_n_comparable"] = concordance_index(log_hazard_hard(model, ds.X), ds, cfg.tie_policy).n_comparable
    return rec


# -- commands ---------------------------------------------------------------------


def run_train(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.dumps(cfg), encoding="utf-8")
    sp = prepare(cfg)
    model = new_model(cfg, sp.train.dim)
    best, hist = train(model, sp.train, sp.val, cfg.train_config())
    models.save(best, out / "model.txt")
    if sp.standardizer is not None:
        write_standardizer(out / "standardizer.csv", sp.standardizer, sp.train.feature_names)
    write_table(out / "history.csv", hist.columns())

    record = {
        "objective": cfg.objective,
        "n_train": sp.train.n,
        "n_val": sp.val.n if sp.val is not None else 0,
        "n_test": sp.test.n,
        "epochs_run": len(hist),
        "best_epoch": hist.best_epoch,
        "final_train_objective": hist.objective[-1],
        "bootstrap_samples": cfg.bootstrap,
        "tie_policy": cfg.tie_policy,
    }
    record.update(evaluate(best, sp.test, cfg))
    beta = fit_cph(sp.train)
    cph = bootstrap_ci(sp.test.X @ beta, sp.test, cfg.bootstrap, cfg.seed, cfg.tie_policy)
    _band_record("test_c_index_cph", cph, record)
    write_record(out / "metrics.json", record)
    return record


def run_eval(cfg: RunConfig, model_path, standardizer_path=None) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.dumps(cfg), encoding="utf-8")
    model = models.load(model_path)
    ds = load_dataset(cfg)
    if standardizer_path is None:
        guess = Path(model_path).with_name("standardizer.csv")
        standardizer_path = guess if guess.is_file() and cfg.standardize else None
    if standardizer_path is not None:
        names, mean, std = read_standardizer(standardizer_path)
        missing = [n for n in names if n not in ds.feature_names]
        if missing:
            raise config_mod.ConfigError(f"data lacks feature column(s) {missing}")
        cols = [ds.feature_names.index(n) for n in names]
        ds = SurvivalDataset((ds.X[:, cols] - mean) / std, ds.time, ds.event, tuple(names))
    record = {"n": ds.n, "bootstrap_samples": cfg.bootstrap, "tie_policy": cfg.tie_policy}
    record.update(evaluate(model, ds, cfg, prefix="eval"))
    write_record(out / "metrics.json", record)
    return record


def _restart_curves(args):
    cfg, objective, restart, sp = args
    run_cfg = cfg.replace(objective=objective, patience=None)
    model = new_model(cfg, sp.train.dim, restart)
    _, hist = train(model, sp.train, sp.val, run_cfg.train_config(), track={"train": sp.train, "test": sp.test})
    return hist.tracked["train"], hist.tracked["test"]


def run_compare(cfg: RunConfig) -> dict:
    """Average per-epoch hard-gating concordance of ELBO vs RT training over restarts."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.dumps(cfg), encoding="utf-8")
    sp = prepare(cfg)
    jobs = [(cfg, obj, r, sp) for obj in ("elbo", "rt") for r in range(cfg.restarts)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_restart_curves, jobs))
    else:
        results = [_restart_curves(j) for j in jobs]

    curves = {"epoch": list(range(1, cfg.epochs + 1))}
    summary = {"restarts": cfg.restarts, "epochs": cfg.epochs}
    for k, obj in enumerate(("elbo", "rt")):
        block = results[k * cfg.restarts:(k + 1) * cfg.restarts]
        for which, col in (("train", 0), ("test", 1)):
            arr = np.array([r[col] for r in block])
            curves[f"{obj}_{which}"] = list(arr.mean(axis=0))
            final = arr[:, -1]
            lo, hi = np.percentile(final, [2.5, 97.5])
            summary[f"{obj}_{which}_final_mean"] = float(final.mean())
            summary[f"{obj}_{which}_final_lower"] = float(lo)
            summary[f"{obj}_{which}_final_upper"] = float(hi)
    summary["elbo_test_ge_rt_test"] = summary["elbo_test_final_mean"] >= summary["rt_test_final_mean"]
    write_table(out / "curves.csv", curves)
    write_record(out / "summary.json", summary)
    return summary


def run_gen_data(n, dim, experts, censoring, seed, path):
    spec = planted_spec(n, dim, experts, censoring, seed)
    ds = generate_synthetic(spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, path)
    truth = {
        "n_subjects": spec.n_subjects,
        "dim": spec.dim,
        "n_true_experts": spec.n_true_experts,
        "censoring_fraction": spec.censoring_fraction,
        "seed": spec.seed,
        "true_experts": [[repr(float(v)) for v in row] for row in spec.true_experts],
        "true_gating": [[repr(float(v)) for v in row] for row in spec.true_gating],
    }
    sidecar = path.with_name(path.name + ".truth.json")
    sidecar.write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return ds, sidecar


# -- verification runs ------------------------------------------------------------


def random_instance(rng, n=8, dim=3, K=2, hidden=(), activation="relu", scale=1.0):
    """Small dataset with distinct times and at least one event, plus a random model."""
    while True:
        X = rng.standard_normal((n, dim))
        time = rng.permutation(n) + 1.0 + rng.uniform(0, 0.5, n)
        event = rng.uniform(size=n) < 0.7
        if event.any():
            break
    ds = SurvivalDataset(X, time, event)
    dims = [dim, *hidden, K]
    weights = [rng.uniform(-scale, scale, (b, a)) for a, b in zip(dims[:-1], dims[1:])]
    gating = models.GatingLinear(weights[0]) if not hidden else models.GatingMLP(weights, activation)
    model = MoCEModel(gating, models.ExpertBank(rng.uniform(-scale, scale, (K, dim))))
    return model, ds


def gradcheck(model: MoCEModel, ds: SurvivalDataset, l2=0.1, step=1e-5, corrupt=False) -> dict:
    errors = {}
    for kind in (ObjectiveKind.RT, ObjectiveKind.ELBO):
        _, grads = objective_and_grad(model, ds, kind, l2)
        if corrupt:
            grads = [g * 1.01 + 1e-3 for g in grads]
        fd = finite_diff_grad(lambda ps: total_objective(model.with_parameters(ps), ds, kind, l2),
                              model.parameters(), step)
        errors[kind.value] = max_relative_error(grads, fd)
    return errors


def sharpen(model: MoCEModel, X, threshold=SHARP_GATING) -> MoCEModel:
    """Scale linear gating weights until every row's top probability reaches ``threshold``."""
    theta = model.gating.weights[0]
    if not np.any(theta):
        raise ValueError("cannot sharpen all-zero gating")
    c = 1.0
    while softmax(X @ (c * theta).T).max(axis=1).min() < threshold:
        c *= 1.5
    return MoCEModel(models.GatingLinear(c * theta), models.ExpertBank(model.experts.betas))


def props_trial(rng, K=None):
    """Check the bound, degeneracy and Taylor properties on one random instance."""
    n = int(rng.integers(2, 9))
    dim = int(rng.integers(1, 5))
    K = int(rng.integers(1, 4)) if K is None else K
    model, ds = random_instance(rng, n, dim, K)
    events = [int(i) for i in np.flatnonzero(ds.event)]
    prop2 = prop3 = -math.inf
    for i in events:
        e, x, r = elbo(model, ds, i), exact_loglik(model, ds, i), rt_objective(model, ds, i)
        prop2 = max(prop2, e - x)
        prop3 = max(prop3, e - r)

    k1 = MoCEModel(models.GatingLinear(model.gating.weights[0][:1]), models.ExpertBank(model.experts.betas[:1]))
    degeneracy = 0.0
    for i in events:
        vals = [exact_loglik(k1, ds, i), rt_objective(k1, ds, i), elbo(k1, ds, i),
                cph_term(k1.experts.betas[0], ds, i)]
        degeneracy = max(degeneracy, max(vals) - min(vals))

    taylor = math.nan
    if K > 1:
        sharp = sharpen(model, ds.X)
        taylor = 0.0
        for i in events:
            exact = math.exp(exact_loglik(sharp, ds, i))
            taylor = max(taylor, abs(phi_decomposition(sharp, ds, i).taylor - exact) / exact)
    return dict(n=n, dim=dim, K=K, events=len(events), prop2_violation=max(prop2, 0.0),
                prop3_violation=max(prop3, 0.0), degeneracy_gap=degeneracy, taylor_rel_error=taylor)


def run_props(trials: int, seed: int, K=None, out=None) -> tuple[list, dict]:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    rows = [dict(trial=t, **props_trial(rng, K)) for t in range(trials)]
    taylor = [r["taylor_rel_error"] for r in rows if not math.isnan(r["taylor_rel_error"])]
    summary = {
        "trials": trials,
        "seed": seed,
        "max_prop2_violation": max(r["prop2_violation"] for r in rows),
        "max_prop3_violation": max(r["prop3_violation"] for r in rows),
        "max_degeneracy_gap": max(r["degeneracy_gap"] for r in rows),
        "max_taylor_rel_error": max(taylor) if taylor else math.nan,
        "taylor_trials_over_1e-3": sum(t > 1e-3 for t in taylor),
    }
    summary["bounds_ok"] = (summary["max_prop2_violation"] <= BOUND_SLACK
                            and summary["max_prop3_violation"] <= BOUND_SLACK
                            and summary["max_degeneracy_gap"] <= DEGENERACY_TOL)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "props.csv", {k: [r[k] for r in rows] for k in rows[0]})
        write_record(out / "props_summary.json", summary)
    return rows, summary
