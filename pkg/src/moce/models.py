"""Mixture-of-Cox-experts model: gating networks, linear expert bank, hazards."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# SELU constants (Klambauer et al.)
_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805

LOG_FLOOR = np.log(1e-300)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, h):
    return (z > 0).astype(float)


def _selu(z):
    return _SELU_SCALE * np.where(z > 0, z, _SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _selu_grad(z, h):
    return np.where(z > 0, _SELU_SCALE, h + _SELU_SCALE * _SELU_ALPHA)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sigmoid_grad(z, h):
    return h * (1.0 - h)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "selu": (_selu, _selu_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
}


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


@dataclass
class ExpertBank:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.array(self.betas, dtype=float, ndmin=2)

    @property
    def K(self) -> int:
        return self.betas.shape[0]

    @property
    def dim(self) -> int:
        return self.betas.shape[1]


@dataclass
class GatingMLP:
    """Bias-free perceptron mapping covariates to expert logits.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``. The
    activation is applied after every layer except the last.
    """

    weights: list
    activation: str = "relu"

    def __post_init__(self):
        self.weights = [np.array(w, dtype=float, ndmin=2) for w in self.weights]
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"incompatible layer shapes {a.shape} -> {b.shape}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def K(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    def forward(self, X):
        """Return logits and the per-layer cache needed by :meth:`backward`."""
        act, _ = ACTIVATIONS[self.activation]
        h = X
        cache = []
        for W in self.weights[:-1]:
            z = h @ W.T
            cache.append((h, z))
            h = act(z)
        cache.append((h, None))
        return h @ self.weights[-1].T, cache

    def backward(self, cache, grad_logits):
        _, dact = ACTIVATIONS[self.activation]
        grads = [None] * len(self.weights)
        h_last, _ = cache[-1]
        grads[-1] = grad_logits.T @ h_last
        dh = grad_logits @ self.weights[-1]
        for layer in range(len(self.weights) - 2, -1, -1):
            h_prev, z = cache[layer]
            h = cache[layer + 1][0]
            dz = dh * dact(z, h)
            grads[layer] = dz.T @ h_prev
            if layer:
                dh = dz @ self.weights[layer]
        return grads


class GatingLinear(GatingMLP):
    """Softmax of ``theta @ x`` with no intercept."""

    def __init__(self, theta):
        super().__init__([theta], "relu")

    @property
    def theta(self) -> np.ndarray:
        return self.weights[0]

    def __repr__(self):
        return f"GatingLinear(theta={self.theta!r})"


@dataclass
class MoCEModel:
    gating: GatingMLP
    experts: ExpertBank

    def __post_init__(self):
        if self.gating.K != self.experts.K:
            raise ValueError(f"gating outputs {self.gating.K} experts but bank has {self.experts.K}")
        if self.gating.dim != self.experts.dim:
            raise ValueError("gating and expert input dimensions differ")

    @property
    def K(self) -> int:
        return self.experts.K

    @property
    def dim(self) -> int:
        return self.experts.dim

    @property
    def is_linear(self) -> bool:
        return isinstance(self.gating, GatingLinear)

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: expert betas, then gating layers."""
        return [self.experts.betas, *self.gating.weights]

    def parameter_names(self) -> list[str]:
        return ["experts"] + [f"gating.{k}" for k in range(len(self.gating.weights))]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MoCEModel":
        betas, *weights = [np.array(p, dtype=float) for p in params]
        if self.is_linear:
            gating = GatingLinear(weights[0])
        else:
            gating = GatingMLP(weights, self.gating.activation)
        return MoCEModel(gating, ExpertBank(betas))

    def copy(self) -> "MoCEModel":
        return self.with_parameters(self.parameters())

    def check_dim(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"covariate dimension {X.shape[-1]} does not match model dimension {self.dim}")
        return X

    def gating_logits(self, X):
        return self.gating.forward(np.atleast_2d(self.check_dim(X)))[0]

    def scores(self, X):
        """Linear expert scores ``betas @ x`` for every expert, shape ``(n, K)``."""
        return np.atleast_2d(self.check_dim(X)) @ self.experts.betas.T


def init_model(dim: int, K: int, hidden: Sequence[int] = (), activation: str = "relu",
               init_scale: float = 0.1, seed=0) -> MoCEModel:
    """Random model with entries drawn N(0, init_scale**2)."""
    if K < 1:
        raise ValueError("need at least one expert")
    rng = np.random.default_rng(seed)
    betas = init_scale * rng.standard_normal((K, dim))
    dims = [dim, *hidden, K]
    weights = [init_scale * rng.standard_normal((b, a)) for a, b in zip(dims[:-1], dims[1:])]
    gating = GatingLinear(weights[0]) if not hidden else GatingMLP(weights, activation)
    return MoCEModel(gating, ExpertBank(betas))


def gating_probs(gating: GatingMLP, x) -> np.ndarray:
    """Expert probabilities for one covariate vector (or a batch of rows)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != gating.dim:
        raise ValueError(f"covariate dimension {x.shape[-1]} does not match gating dimension {gating.dim}")
    logits = gating.forward(np.atleast_2d(x))[0]
    p = softmax(logits)
    return p[0] if x.ndim == 1 else p


def log_hazard_soft(m: MoCEModel, X) -> np.ndarray:
    X = np.atleast_2d(m.check_dim(X))
    logp = np.maximum(log_softmax(m.gating_logits(X)), LOG_FLOOR)
    q = logp + m.scores(X)
    mx = q.max(axis=1)
    return mx + np.log(np.exp(q - mx[:, None]).sum(axis=1))


def hard_expert(m: MoCEModel, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. lowest index on ties
    return np.argmax(m.gating_logits(X), axis=1)


def log_hazard_hard(m: MoCEModel, X) -> np.ndarray:
    X = np.atleast_2d(m.check_dim(X))
    k = hard_expert(m, X)
    return np.take_along_axis(m.scores(X), k[:, None], axis=1)[:, 0]


def hazard_soft(m: MoCEModel, x):
    """Gating-weighted average of the expert relative risks ``exp(beta_k @ x)``."""
    with np.errstate(over="ignore"):
        h = np.exp(log_hazard_soft(m, x))
    return float(h[0]) if np.ndim(x) == 1 else h


def hazard_hard(m: MoCEModel, x):
    """Relative risk under the single most probable expert."""
    with np.errstate(over="ignore"):
        h = np.exp(log_hazard_hard(m, x))
    return float(h[0]) if np.ndim(x) == 1 else h


# -- serialization -----------------------------------------------------------

FORMAT_HEADER = "moce-model 1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps(m: MoCEModel) -> str:
    lines = [FORMAT_HEADER]
    lines.append(f"gating {'linear' if m.is_linear else 'mlp'}")
    lines.append(f"activation {m.gating.activation if not m.is_linear else 'none'}")
    lines.append("layer_dims " + " ".join(str(d) for d in m.gating.layer_dims))
    for name, arr in zip(m.parameter_names(), m.parameters()):
        lines.append(f"array {name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in arr)
    return "\n".join(lines) + "\n"


def loads(text: str) -> MoCEModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError(f"not a model file (expected header {FORMAT_HEADER!r})")
    kind = lines[1].split()[1]
    activation = lines[2].split()[1]
    dims = [int(v) for v in lines[3].split()[1:]]
    arrays = {}
    k = 4
    while k < len(lines):
        _, name, r, c = lines[k].split()
        r, c = int(r), int(c)
        rows = [[float(v) for v in lines[k + 1 + j].split()] for j in range(r)]
        arrays[name] = np.array(rows, dtype=float).reshape(r, c)
        k += 1 + r
    n_layers = len(dims) - 1
    weights = [arrays[f"gating.{j}"] for j in range(n_layers)]
    if kind == "linear":
        gating = GatingLinear(weights[0])
    else:
        gating = GatingMLP(weights, activation)
    model = MoCEModel(gating, ExpertBank(arrays["experts"]))
    if model.gating.layer_dims != dims:
        raise ValueError("layer_dims line disagrees with stored arrays")
    return model


def save(m: MoCEModel, path):
    Path(path).write_text(dumps(m), encoding="utf-8")


def load(path) -> MoCEModel:
    return loads(Path(path).read_text(encoding="utf-8"))
