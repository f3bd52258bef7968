"""Adam, the layer-wise L1 penalty, weight thresholding and the error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, ShapeMismatch, ZeroReference
from .jet import ParamGrad
from .model import Mlp

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class RegSpec:
    """One nonnegative L1 weight per weight matrix, input layer first."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if any(not np.isfinite(a) or a < 0 for a in self.alpha):
            raise ValueError(f"regularization weights must be finite and >= 0: {self.alpha}")

    @classmethod
    def zeros(cls, depth: int) -> "RegSpec":
        return cls((0.0,) * depth)

    @property
    def active(self) -> bool:
        return any(a > 0 for a in self.alpha)

    def check(self, net: Mlp):
        if len(self.alpha) != net.depth:
            raise LengthMismatch(f"{len(self.alpha)} alphas for a net with {net.depth} weight matrices")


def l1_penalty(net: Mlp, reg: RegSpec) -> float:
    reg.check(net)
    return float(sum(a * np.abs(W).sum() for a, W in zip(reg.alpha, net.weights)))


def l1_subgradient(net: Mlp, reg: RegSpec) -> ParamGrad:
    """``alpha_i * sign(W_i)`` with sign(0) = 0; biases are not penalized."""
    reg.check(net)
    return ParamGrad(
        [a * np.sign(W) for a, W in zip(reg.alpha, net.weights)],
        [np.zeros_like(b) for b in net.biases],
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    k: int = 0
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # step decay: lr0 * decay_factor ** (epoch // decay_every); 0 disables it
    decay_every: int = 0
    decay_factor: float = 0.5
    epoch: int = 0

    @classmethod
    def fresh(cls, net: Mlp, lr: float = 1e-3, **kwargs) -> "AdamState":
        zeros = [np.zeros_like(p) for p in _params(net)]
        return cls(zeros, [z.copy() for z in zeros], lr0=lr, **kwargs)

    @property
    def lr(self) -> float:
        if self.decay_every > 0:
            return self.lr0 * self.decay_factor ** (self.epoch // self.decay_every)
        return self.lr0

    def flat_moments(self):
        return np.concatenate([a.ravel() for a in self.m]), np.concatenate([a.ravel() for a in self.v])

    def load_flat(self, m_flat, v_flat):
        for dst, src in ((self.m, m_flat), (self.v, v_flat)):
            pos = 0
            for a in dst:
                a[...] = src[pos : pos + a.size].reshape(a.shape)
                pos += a.size


def _params(net: Mlp):
    out = []
    for W, b in zip(net.weights, net.biases):
        out.extend((W, b))
    return out


def _grads(grad: ParamGrad):
    out = []
    for dW, db in zip(grad.dW, grad.db):
        out.extend((dW, db))
    return out


def adam_step(net: Mlp, grad: ParamGrad, state: AdamState, reg: RegSpec | None = None, prox: bool = False):
    """One bias-corrected Adam update, in place.  Returns ``(net, state)``.

    With ``prox=True`` each weight matrix is then soft-thresholded by
    ``lr * alpha_i`` (pass the gradient of the smooth part only).
    """
    params, grads = _params(net), _grads(grad)
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeMismatch("gradient / optimizer state do not mirror the network")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape} vs moment {m.shape}")

    state.k += 1
    lr = state.lr
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.k
    bc2 = 1.0 - b2**state.k
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

    if prox and reg is not None:
        reg.check(net)
        for a, W in zip(reg.alpha, net.weights):
            if a > 0:
                W[...] = soft_threshold(W, lr * a)
    return net, state


def soft_threshold(w: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)


def threshold(net: Mlp, eps: float = DEFAULT_EPSILON) -> Mlp:
    """Copy of ``net`` with weight entries ``|w| < eps`` set to exactly 0."""
    if eps < 0:
        raise ValueError("threshold must be >= 0")
    out = net.copy()
    for W in out.weights:
        W[np.abs(W) < eps] = 0.0
    return out


@dataclass
class SparsityReport:
    zero_percent: list[float]
    nonzero: list[int]
    sizes: list[int]
    epsilon: float
    total_nonzero: int = field(init=False)

    def __post_init__(self):
        self.total_nonzero = int(sum(self.nonzero))

    @property
    def mean_zero_percent(self) -> float:
        return float(np.mean(self.zero_percent))

    def format(self) -> str:
        pct = ", ".join(f"{p:.1f}%" for p in self.zero_percent)
        return f"[{pct}] nonzero={self.total_nonzero}"


def sparsity_report(net: Mlp, eps: float = DEFAULT_EPSILON) -> SparsityReport:
    if eps < 0:
        raise ValueError("threshold must be >= 0")
    zero, nnz, sizes = [], [], []
    for W in net.weights:
        small = int(np.count_nonzero(np.abs(W) < eps)) if eps > 0 else int(np.count_nonzero(W == 0))
        zero.append(100.0 * small / W.size)
        nnz.append(W.size - small)
        sizes.append(W.size)
    return SparsityReport(zero, nnz, sizes, eps)


def relative_l2(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"{y.size} reference values vs {y_hat.size} predictions")
    ref = np.linalg.norm(y)
    if ref == 0:
        raise ZeroReference("reference vector has zero norm")
    return float(np.linalg.norm(y - y_hat) / ref)
