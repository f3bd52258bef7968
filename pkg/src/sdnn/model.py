"""Fully connected networks: architecture, Glorot initialization, checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadWidths, CorruptChecksum, IoError, ShapeMismatch, VersionMismatch

ACTIVATIONS = ("relu", "tanh", "identity")

MAGIC = b"SDNNCKPT"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32


@dataclass
class Mlp:
    """Layers ``x_i = act(W_i x_{i-1} + b_i)``; the last layer is affine.

    ``weights[i]`` has shape ``(d_{i+1}, d_i)`` so that it acts on column
    vectors, matching the usual ``W x + b`` reading.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight matrix")
        self.check_shapes()

    def check_shapes(self):
        prev = None
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
                raise ShapeMismatch(f"layer {i + 1}: W {W.shape} vs b {b.shape}")
            if prev is not None and W.shape[1] != prev:
                raise ShapeMismatch(
                    f"layer {i + 1} expects {W.shape[1]} inputs, previous layer gives {prev}"
                )
            prev = W.shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @property
    def n_weights(self) -> int:
        return sum(W.size for W in self.weights)

    def flatten(self) -> np.ndarray:
        """Parameters in the order W_1, b_1, W_2, b_2, ... (row-major)."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "Mlp":
        return Mlp(*unflatten(self.widths, theta), activation=self.activation)

    def copy(self) -> "Mlp":
        return Mlp(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Plain forward pass on a batch ``x`` of shape ``(N, d_0)``."""
        from .jet import activation_table

        act = activation_table(self.activation)[0]
        a = np.asarray(x, dtype=np.float64)
        last = self.depth - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if i < last:
                a = act(a)
        return a


def param_count(widths) -> int:
    return sum(widths[i] * widths[i - 1] + widths[i] for i in range(1, len(widths)))


def unflatten(widths, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (param_count(widths),):
        raise ShapeMismatch(
            f"expected {param_count(widths)} parameters for {widths}, got {theta.shape}"
        )
    weights, biases, pos = [], [], 0
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        weights.append(theta[pos : pos + d_in * d_out].reshape(d_out, d_in).copy())
        pos += d_in * d_out
        biases.append(theta[pos : pos + d_out].copy())
        pos += d_out
    return weights, biases


def _check_widths(widths):
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise BadWidths(f"need at least two positive widths, got {widths}")
    return widths


def init(widths, activation="tanh", seed=0) -> Mlp:
    """Glorot-uniform weights, zero biases; reproducible for a given seed."""
    from .sampling import make_rng

    widths = _check_widths(widths)
    rng = make_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return Mlp(weights, biases, activation)


@dataclass
class Checkpoint:
    net: Mlp
    seed: int = 0
    step: int = 0
    # Adam moments, flattened in Mlp.flatten order; None when not saved.
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _pack(ckpt: Checkpoint) -> bytes:
    net = ckpt.net
    has_moments = ckpt.m is not None
    header = {
        "widths": net.widths,
        "activation": net.activation,
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "has_moments": has_moments,
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    body.append(net.flatten().astype("<f8").tobytes())
    if has_moments:
        for vec in (ckpt.m, ckpt.v):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (net.n_params,):
                raise ShapeMismatch("optimizer moments must mirror the parameters")
            body.append(vec.astype("<f8").tobytes())
    blob = b"".join(body)
    return blob + hashlib.sha256(blob).digest()


def _unpack(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8 + _DIGEST_BYTES or not blob.startswith(MAGIC):
        raise CorruptChecksum("not an sdnn checkpoint (bad magic or truncated)")
    payload, digest = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptChecksum("checksum mismatch")
    version, hlen = struct.unpack_from("<II", payload, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(payload[start : start + hlen].decode("utf-8"))
        widths = _check_widths(header["widths"])
    except (ValueError, KeyError, BadWidths) as exc:
        raise CorruptChecksum(f"bad checkpoint header: {exc}") from exc
    data = np.frombuffer(payload[start + hlen :], dtype="<f8").astype(np.float64)
    n = param_count(widths)
    n_vec = 3 if header.get("has_moments") else 1
    if (len(payload) - start - hlen) % 8 or data.size != n_vec * n:
        raise CorruptChecksum(
            f"payload holds {data.size} values, header widths {widths} imply {n_vec * n}"
        )
    net = Mlp(*unflatten(widths, data[:n]), activation=header["activation"])
    ckpt = Checkpoint(net, header.get("seed", 0), header.get("step", 0), extra=header.get("extra", {}))
    if n_vec == 3:
        ckpt.m = data[n : 2 * n].copy()
        ckpt.v = data[2 * n :].copy()
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(_pack(ckpt))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return _unpack(blob)


def save(net: Mlp, path, **kwargs) -> Path:
    return save_checkpoint(Checkpoint(net, **kwargs), path)


def load(path) -> Mlp:
    return load_checkpoint(path).net
