"""Exact input derivatives of an Mlp and parameter gradients through them.

A batch of points is pushed through the network together with the
tangents ``d/dt``, ``d/dx`` and the second tangent ``d2/dx2`` of every
layer's activations.  The per-layer recurrence for ``z = W a + b``,
``y = act(z)`` is::

    y_t  = act'(z) * (W a_t)
    y_x  = act'(z) * (W a_x)
    y_xx = act''(z) * (W a_x)**2 + act'(z) * (W a_xx)

``record`` keeps every intermediate on a ``Tape`` and ``backward_params``
runs the adjoint of these recurrences, so the gradient of a loss built
from ``u, u_t, u_x, u_xx`` with respect to all weights is exact.

Batches are row-major: a point set has shape ``(N, d_0)`` and every jet
component has shape ``(N, d_i)``.  For two-input networks the columns are
``(t, x)``; a one-input network's single column is ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ShapeMismatch, TapeMismatch, UnsupportedDerivative
from .model import Mlp

COMPONENTS = ("value", "d_t", "d_x", "d_xx")
_WANT_ALIASES = {"t": "d_t", "x": "d_x", "xx": "d_xx", "d_t": "d_t", "d_x": "d_x", "d_xx": "d_xx"}


def _tanh_table():
    def s0(z):
        return np.tanh(z)

    def s1(z):
        s = np.tanh(z)
        return 1.0 - s * s

    def s2(z):
        s = np.tanh(z)
        return -2.0 * s * (1.0 - s * s)

    def s3(z):
        s = np.tanh(z)
        d1 = 1.0 - s * s
        return -2.0 * (d1 * d1 + s * (-2.0 * s * d1))

    return s0, s1, s2, s3


def _relu_table():
    def s0(z):
        return np.maximum(z, 0.0)

    def s1(z):
        # subgradient convention: act'(0) = 0
        return (np.asarray(z) > 0).astype(np.float64)

    def zero(z):
        return np.zeros_like(np.asarray(z, dtype=np.float64))

    return s0, s1, zero, zero


def _identity_table():
    def s0(z):
        return np.asarray(z, dtype=np.float64)

    def s1(z):
        return np.ones_like(np.asarray(z, dtype=np.float64))

    def zero(z):
        return np.zeros_like(np.asarray(z, dtype=np.float64))

    return s0, s1, zero, zero


_TABLES = {"tanh": _tanh_table(), "relu": _relu_table(), "identity": _identity_table()}
# activations whose second derivative exists everywhere
_SMOOTH = {"tanh", "identity"}


def activation_table(kind: str):
    """Return ``(act, act', act'', act''')`` as vectorized callables."""
    try:
        return _TABLES[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def _derivatives(kind: str, z: np.ndarray, order: int):
    """act(z) and its derivatives up to ``order``; higher ones are None."""
    if kind == "tanh":
        y = np.tanh(z)
        s1 = 1.0 - y * y
        s2 = -2.0 * y * s1 if order >= 2 else None
        s3 = -2.0 * (s1 * s1 + y * s2) if order >= 3 else None
        return y, s1, s2, s3
    table = activation_table(kind)
    return (table[0](z), table[1](z), table[2](z) if order >= 2 else None, table[3](z) if order >= 3 else None)


def _normalize_want(want: Iterable[str], n_in: int) -> tuple[str, ...]:
    out = set()
    for w in want:
        if w not in _WANT_ALIASES:
            raise UnsupportedDerivative(f"derivative {w!r} is not propagated")
        out.add(_WANT_ALIASES[w])
    if out and n_in > 2:
        raise UnsupportedDerivative(f"input derivatives need 1 or 2 inputs, net has {n_in}")
    if "d_t" in out and n_in != 2:
        raise UnsupportedDerivative("d/dt needs a two-input (t, x) network")
    return tuple(c for c in COMPONENTS[1:] if c in out)


@dataclass
class Jet2:
    """Activations plus the requested input derivatives; unrequested ones are None."""

    value: np.ndarray
    d_t: np.ndarray | None = None
    d_x: np.ndarray | None = None
    d_xx: np.ndarray | None = None

    def components(self):
        return {c: getattr(self, c) for c in COMPONENTS if getattr(self, c) is not None}


def _layout(want: tuple[str, ...]) -> tuple[str, ...]:
    """Components carried through the layers; d_xx needs d_x alongside."""
    carried = set(want)
    if "d_xx" in carried:
        carried.add("d_x")
    return ("value",) + tuple(c for c in COMPONENTS[1:] if c in carried)


def _to_jet(stack: np.ndarray, layout, want) -> Jet2:
    jet = Jet2(stack[0])
    for k, name in enumerate(layout[1:], start=1):
        if name in want:
            setattr(jet, name, stack[k])
    return jet


@dataclass
class LayerRecord:
    inp: np.ndarray  # stacked input jet, shape (C, N, d_in)
    z: np.ndarray  # stacked pre-activation jet, shape (C, N, d_out)
    s1: np.ndarray | None
    s2: np.ndarray | None
    s3: np.ndarray | None
    activated: bool


@dataclass
class Tape:
    """Everything ``backward_params`` needs: inputs and per-layer intermediates."""

    net: Mlp
    points: np.ndarray
    want: tuple[str, ...]
    layout: tuple[str, ...]
    layers: list[LayerRecord] = field(default_factory=list)
    output: Jet2 | None = None

    @property
    def widths(self):
        return [self.points.shape[1]] + [rec.z.shape[2] for rec in self.layers]

    def replay(self) -> Jet2:
        return forward_jet(self.net, self.points, self.want)


@dataclass
class ParamGrad:
    dW: list[np.ndarray]
    db: list[np.ndarray]

    @classmethod
    def zeros(cls, net: Mlp) -> "ParamGrad":
        return cls([np.zeros_like(W) for W in net.weights], [np.zeros_like(b) for b in net.biases])

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        return ParamGrad(
            [a + b for a, b in zip(self.dW, other.dW)],
            [a + b for a, b in zip(self.db, other.db)],
        )

    def scale(self, c: float) -> "ParamGrad":
        return ParamGrad([c * a for a in self.dW], [c * a for a in self.db])

    def flatten(self) -> np.ndarray:
        parts = []
        for dW, db in zip(self.dW, self.db):
            parts.append(dW.ravel())
            parts.append(db)
        return np.concatenate(parts)


def _as_points(net: Mlp, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if pts.shape[0] == net.widths[0] else pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[1] != net.widths[0]:
        raise ShapeMismatch(f"points of shape {pts.shape} do not fit input width {net.widths[0]}")
    return pts


def _seed(pts: np.ndarray, layout) -> np.ndarray:
    n, d0 = pts.shape
    stack = np.zeros((len(layout), n, d0))
    stack[0] = pts
    if "d_t" in layout:
        stack[layout.index("d_t"), :, 0] = 1.0
    if "d_x" in layout:
        stack[layout.index("d_x"), :, d0 - 1] = 1.0
    return stack


def _run(net: Mlp, points, want, keep: bool):
    net.check_shapes()
    pts = _as_points(net, points)
    want = _normalize_want(want, pts.shape[1])
    if "d_xx" in want and net.activation not in _SMOOTH:
        raise UnsupportedDerivative(f"second derivatives need a smooth activation, not {net.activation}")
    layout = _layout(want)
    it = layout.index("d_t") if "d_t" in layout else None
    ix = layout.index("d_x") if "d_x" in layout else None
    ixx = layout.index("d_xx") if "d_xx" in layout else None
    n_comp, n = len(layout), pts.shape[0]

    cur = _seed(pts, layout)
    records = []
    last = net.depth - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        d_out = W.shape[0]
        z = (cur.reshape(n_comp * n, -1) @ np.ascontiguousarray(W.T)).reshape(n_comp, n, d_out)
        z[0] += b
        activated = i < last and net.activation != "identity"
        s1 = s2 = s3 = None
        if activated:
            order = 3 if keep and ixx is not None else 2 if ixx is not None or (keep and n_comp > 1) else 1
            y, s1, s2, s3 = _derivatives(net.activation, z[0], order)
            out = np.empty_like(z)
            out[0] = y
            if n_comp > 1:
                np.multiply(s1, z[1:], out=out[1:])
            if ixx is not None:
                tmp = z[ix] * z[ix]
                tmp *= s2
                out[ixx] += tmp
        else:
            out = z
        if keep:
            records.append(LayerRecord(cur, z, s1, s2, s3, activated))
        cur = out

    jet = _to_jet(cur, layout, want)
    if keep:
        return jet, Tape(net, pts, want, layout, records, jet)
    return jet, None


def forward_jet(net: Mlp, points, want: Iterable[str] = ()) -> Jet2:
    """Network output and the requested input derivatives at ``points``.

    ``want`` is any subset of ``{"t", "x", "xx"}``.
    """
    return _run(net, points, want, keep=False)[0]


def record(net: Mlp, points, want: Iterable[str] = ()) -> Tape:
    """Like :func:`forward_jet` but keeps the intermediates for a reverse pass."""
    return _run(net, points, want, keep=True)[1]


def backward_params(tape: Tape, cotangents: dict, net: Mlp | None = None) -> ParamGrad:
    """Gradient of ``sum(cot[c] * output[c])`` over all points and components.

    ``cotangents`` maps component names (``value``, ``d_t``, ``d_x``,
    ``d_xx``) to arrays shaped like the corresponding output component.
    Components missing from the mapping are treated as zero.
    """
    if net is not None and net.widths != tape.widths:
        raise TapeMismatch(f"tape recorded widths {tape.widths}, net has {net.widths}")
    net = tape.net
    layout = tape.layout
    n_comp, n_pts = len(layout), tape.points.shape[0]
    n_out = tape.widths[-1]

    g = np.zeros((n_comp, n_pts, n_out))
    for name, cot in cotangents.items():
        if cot is None:
            continue
        if name not in COMPONENTS:
            raise TapeMismatch(f"unknown jet component {name!r}")
        if name != "value" and name not in tape.want:
            raise TapeMismatch(f"cotangent for {name} but the tape did not record it")
        cot = np.asarray(cot, dtype=np.float64)
        if cot.shape != (n_pts, n_out):
            raise TapeMismatch(f"cotangent {name} has shape {cot.shape}, expected {(n_pts, n_out)}")
        g[layout.index(name)] = cot

    it = layout.index("d_t") if "d_t" in layout else None
    ix = layout.index("d_x") if "d_x" in layout else None
    ixx = layout.index("d_xx") if "d_xx" in layout else None

    dW = [None] * net.depth
    db = [None] * net.depth
    for i in range(net.depth - 1, -1, -1):
        rec = tape.layers[i]
        W = net.weights[i]
        d_in, d_out = W.shape[1], W.shape[0]
        if rec.activated:
            z = rec.z
            gz = np.empty_like(g)
            # tangent rows: y' = s1 * z'
            if n_comp > 1:
                np.multiply(g[1:], rec.s1, out=gz[1:])
            gz[0] = g[0] * rec.s1
            if it is not None:
                gz[0] += g[it] * z[it] * rec.s2
            if ix is not None:
                gz[0] += g[ix] * z[ix] * rec.s2
            if ixx is not None:
                # y_xx = s2 * z_x**2 + s1 * z_xx
                gxx = g[ixx]
                gz[0] += gxx * (rec.s3 * z[ix] * z[ix] + rec.s2 * z[ixx])
                gz[ix] += 2.0 * gxx * rec.s2 * z[ix]
        else:
            gz = g
        flat_g = gz.reshape(n_comp * n_pts, d_out)
        dW[i] = flat_g.T @ rec.inp.reshape(n_comp * n_pts, d_in)
        db[i] = gz[0].sum(axis=0)
        if i > 0:
            g = (flat_g @ W).reshape(n_comp, n_pts, d_in)
    return ParamGrad(dW, db)
