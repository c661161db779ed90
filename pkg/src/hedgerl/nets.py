"""Minimal dense-network engine: forward, backprop, dropout, Adam.

Sized for the tiny actor/critic networks the hedging agent needs.  All
parameters are float64 numpy arrays; every function is deterministic given
its explicit inputs (dropout masks carry their own seed).  Checkpoints are
versioned JSON whose floats round-trip bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
CHECKPOINT_FORMAT_VERSION = 1

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

__all__ = [
    "LOG_VAR_MIN",
    "LOG_VAR_MAX",
    "DenseNet",
    "DropoutMask",
    "Gradients",
    "AdamState",
    "init_net",
    "sample_mask",
    "forward",
    "backward",
    "gaussian_nll",
    "gaussian_nll_grad",
    "init_adam",
    "adam_step",
    "net_to_dict",
    "net_from_dict",
    "save_net",
    "load_net",
]


@dataclass
class DenseNet:
    """Fully connected network; activations/dropout_rates are per linear layer.

    dropout_rates has one entry per hidden layer (the output layer never
    drops).  Weight matrices are (fan_in, fan_out).
    """

    layer_dims: list[int]
    activations: list[str]
    dropout_rates: list[float]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: weights then biases, layer by layer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        for i in range(self.n_layers):
            self.weights[i] = params[2 * i]
            self.biases[i] = params[2 * i + 1]


@dataclass
class DropoutMask:
    """Inverted-dropout masks (entries 0 or 1/(1-p)) per hidden layer."""

    masks: list[np.ndarray | None]
    seed: int


@dataclass
class Gradients:
    """Parameter gradients plus the gradient w.r.t. the network input."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    wrt_input: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_net(
    layer_dims: list[int],
    activations: list[str],
    dropout_rates: list[float] | None = None,
    *,
    rng: np.random.Generator,
) -> DenseNet:
    """Uniform fan-in init: W ~ U(-1/sqrt(n_in), 1/sqrt(n_in)), biases zero."""
    n_layers = len(layer_dims) - 1
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if len(activations) != n_layers:
        raise ValueError(f"expected {n_layers} activations, got {len(activations)}")
    for a in activations:
        if a not in ACTIVATIONS:
            raise ValueError(f"unknown activation {a!r}")
    if dropout_rates is None:
        dropout_rates = [0.0] * (n_layers - 1)
    if len(dropout_rates) != n_layers - 1:
        raise ValueError(f"expected {n_layers - 1} dropout rates, got {len(dropout_rates)}")
    for p in dropout_rates:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(
        layer_dims=list(layer_dims),
        activations=list(activations),
        dropout_rates=list(dropout_rates),
        weights=weights,
        biases=biases,
    )


def sample_mask(
    net: DenseNet, seed: int, batch_size: int | None = None
) -> DropoutMask | None:
    """Draw fresh inverted-dropout masks; None when every rate is zero.

    With batch_size=None one mask per hidden unit is drawn (a single
    weight-realization, as in MC-dropout passes); otherwise masks are
    per-sample.
    """
    if all(p == 0.0 for p in net.dropout_rates):
        return None
    rng = np.random.default_rng(int(seed))
    masks: list[np.ndarray | None] = []
    for dim, p in zip(net.layer_dims[1:-1], net.dropout_rates):
        if p == 0.0:
            masks.append(None)
            continue
        shape = (dim,) if batch_size is None else (batch_size, dim)
        keep = rng.random(shape) >= p
        masks.append(keep / (1.0 - p))
    return DropoutMask(masks=masks, seed=int(seed))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have {dim} columns, got shape {x.shape}")
    return x, single


def _forward_cached(
    net: DenseNet, x: np.ndarray, mask: DropoutMask | None
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Returns output and per-layer (input, pre-activation, activation) cache."""
    cache = []
    h = x
    for i in range(net.n_layers):
        z = h @ net.weights[i] + net.biases[i]
        a = _activate(net.activations[i], z)
        if mask is not None and i < net.n_layers - 1 and mask.masks[i] is not None:
            a = a * mask.masks[i]
        cache.append((h, z, a))
        h = a
    return h, cache


def forward(net: DenseNet, x: np.ndarray, mask: DropoutMask | None = None) -> np.ndarray:
    """Evaluate the network; mask=None means deterministic (no dropout)."""
    xb, single = _as_batch(x, net.layer_dims[0], "input")
    out, _ = _forward_cached(net, xb, mask)
    return out[0] if single else out


def backward(
    net: DenseNet,
    x: np.ndarray,
    upstream_grad: np.ndarray,
    mask: DropoutMask | None = None,
) -> Gradients:
    """Backpropagate an upstream gradient; recomputes the forward pass internally."""
    xb, single = _as_batch(x, net.layer_dims[0], "input")
    g = np.asarray(upstream_grad, dtype=float)
    if single:
        g = g[None, :] if g.ndim == 1 else g.reshape(1, -1)
    if g.shape != (xb.shape[0], net.layer_dims[-1]):
        raise ValueError(
            f"upstream_grad shape {g.shape} incompatible with output "
            f"({xb.shape[0]}, {net.layer_dims[-1]})"
        )
    _, cache = _forward_cached(net, xb, mask)
    w_grads: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for i in reversed(range(net.n_layers)):
        h, z, a = cache[i]
        if mask is not None and i < net.n_layers - 1 and mask.masks[i] is not None:
            g = g * mask.masks[i]
        gz = g * _activation_grad(net.activations[i], z, a)
        w_grads[i] = h.T @ gz
        b_grads[i] = gz.sum(axis=0)
        g = gz @ net.weights[i].T
    wrt_input = g[0] if single else g
    return Gradients(weights=w_grads, biases=b_grads, wrt_input=wrt_input)


def _clip_log_var(log_var: np.ndarray) -> np.ndarray:
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def gaussian_nll(residual, log_var):
    """Heteroscedastic Gaussian negative log-likelihood (constant dropped).

    0.5 * exp(-lv) * residual^2 + 0.5 * lv with lv clipped to
    [LOG_VAR_MIN, LOG_VAR_MAX]; elementwise on arrays.
    """
    residual = np.asarray(residual, dtype=float)
    if not np.all(np.isfinite(residual)) or not np.all(np.isfinite(log_var)):
        raise ValueError("gaussian_nll requires finite inputs")
    lv = _clip_log_var(np.asarray(log_var, dtype=float))
    out = 0.5 * np.exp(-lv) * residual**2 + 0.5 * lv
    return float(out) if out.ndim == 0 else out


def gaussian_nll_grad(residual, log_var):
    """Gradients (d/d residual, d/d log_var) of gaussian_nll.

    The log_var gradient is zero where the clip is active, matching finite
    differences of the clipped loss.
    """
    residual = np.asarray(residual, dtype=float)
    raw = np.asarray(log_var, dtype=float)
    lv = _clip_log_var(raw)
    inv_var = np.exp(-lv)
    d_res = inv_var * residual
    d_lv = (-0.5 * inv_var * residual**2 + 0.5) * ((raw > LOG_VAR_MIN) & (raw < LOG_VAR_MAX))
    if d_res.ndim == 0:
        return float(d_res), float(d_lv)
    return d_res, d_lv


@dataclass
class AdamState:
    """First/second moment accumulators with bias-corrected updates."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(
    params: list[np.ndarray],
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new params, mutates the moments."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/moment counts do not match")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# ---------------------------------------------------------------------------
# Checkpoint serialization: versioned JSON, floats via repr (bit-exact).
# ---------------------------------------------------------------------------

def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activations": list(net.activations),
        "dropout_rates": [float(p) for p in net.dropout_rates],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> DenseNet:
    version = d.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    return DenseNet(
        layer_dims=list(d["layer_dims"]),
        activations=list(d["activations"]),
        dropout_rates=[float(p) for p in d["dropout_rates"]],
        weights=[np.array(w, dtype=float) for w in d["weights"]],
        biases=[np.array(b, dtype=float) for b in d["biases"]],
    )


def save_net(path: str | Path, net: DenseNet) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net), sort_keys=True), encoding="utf-8")


def load_net(path: str | Path) -> DenseNet:
    return net_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
