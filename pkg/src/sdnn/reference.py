"""Reference solutions used to score trained networks.

* ``burgers_exact`` evaluates the Cole-Hopf integral representation of the
  viscous Burgers solution with Gauss-Hermite quadrature.
* ``nls_spectral_solve`` integrates the focusing cubic Schrodinger
  equation on a periodic grid with a Fourier pseudospectral method and RK4.

Both rely on primitives implemented here: ``gauss_hermite`` and a radix-2
``fft``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    BadLength,
    ConvergenceFailure,
    CorruptChecksum,
    DomainViolation,
    IoError,
    NonFiniteIntermediate,
    UnstableBlowup,
    VersionMismatch,
)

BURGERS_NU = 0.01 / np.pi
NLS_PERIOD = 10.0
NLS_T_END = np.pi / 2


# ------------------------------------------------------------ quadrature


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.nodes.size


def _hermite_orthonormal(z: np.ndarray, n: int):
    """Orthonormal Hermite function h_n (without the Gaussian) and h_n'."""
    p1 = np.full_like(z, np.pi**-0.25)
    p2 = np.zeros_like(z)
    for j in range(1, n + 1):
        p3 = p2
        p2 = p1
        p1 = z * np.sqrt(2.0 / j) * p2 - np.sqrt((j - 1) / j) * p3
    return p1, np.sqrt(2.0 * n) * p2


@lru_cache(maxsize=32)
def _gauss_hermite(n: int):
    # Bracket every root by sign changes of the recurrence on a fine grid,
    # then polish all of them at once with safeguarded Newton steps.
    if n == 1:
        return np.array([0.0]), np.array([np.sqrt(np.pi)])
    edge = np.sqrt(2.0 * n + 1.0) + 1.0
    grid = np.linspace(-edge, edge, 16 * n + 1)
    vals, _ = _hermite_orthonormal(grid, n)
    change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    # an exact zero on the grid shows up in two adjacent intervals
    change = change[np.concatenate([[True], np.diff(change) > 1])]
    if change.size != n:
        raise ConvergenceFailure(f"found {change.size} sign changes for H_{n}")
    lo, hi = grid[change], grid[change + 1]
    z = 0.5 * (lo + hi)
    for _ in range(100):
        p, dp = _hermite_orthonormal(z, n)
        step = np.divide(p, dp, out=np.zeros_like(p), where=dp != 0)
        z_new = z - step
        # fall back to bisection whenever Newton leaves its bracket
        outside = (z_new <= lo) | (z_new >= hi)
        if np.any(outside):
            left = np.sign(_hermite_orthonormal(lo, n)[0]) == np.sign(p)
            lo = np.where(outside & left, z, lo)
            hi = np.where(outside & ~left, z, hi)
            z_new = np.where(outside, 0.5 * (lo + hi), z_new)
        done = np.all(np.abs(z_new - z) <= 1e-15 * np.maximum(1.0, np.abs(z)))
        z = z_new
        if done:
            break
    else:
        raise ConvergenceFailure(f"Newton did not converge for H_{n}")
    z = 0.5 * (z - z[::-1])  # exact symmetry
    if n % 2:
        z[n // 2] = 0.0
    _, dp = _hermite_orthonormal(z, n)
    w = 2.0 / (dp * dp)
    w = 0.5 * (w + w[::-1])
    return z, w


def gauss_hermite(n: int) -> QuadratureRule:
    """n-point rule for integrals against ``exp(-s**2)`` on the real line."""
    if not 1 <= n <= 200:
        raise ValueError("Gauss-Hermite order must be in [1, 200]")
    nodes, weights = _gauss_hermite(int(n))
    roots = np.unique(np.round(nodes, 10))
    if roots.size != n:
        raise ConvergenceFailure(f"Newton converged to repeated roots for n={n}")
    return QuadratureRule(nodes.copy(), weights.copy())


# --------------------------------------------------------------- Burgers


def burgers_exact(t, x, n_quad: int = 100, nu: float = BURGERS_NU, t_min: float = 1e-8):
    """Exact solution of u_t + u u_x = nu u_xx, u(0,x) = -sin(pi x), u(t,+-1) = 0.

    Vectorized over broadcastable ``t`` and ``x``.
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    t, x = np.broadcast_arrays(t, x)
    if np.any(t < 0) or np.any(t > 1 + 1e-12) or np.any(np.abs(x) > 1 + 1e-12):
        raise DomainViolation("Burgers solution is defined for t in [0, 1], x in [-1, 1]")
    rule = gauss_hermite(n_quad)
    out = np.array(-np.sin(np.pi * x))
    late = t > t_min
    if np.any(late):
        tt, xx = t[late], x[late]
        # eta = 2 sqrt(nu t) s turns the heat kernel into the Hermite weight
        y = xx[:, None] - 2.0 * np.sqrt(nu * tt)[:, None] * rule.nodes[None, :]
        log_h = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
        log_h -= log_h.max(axis=1, keepdims=True)
        terms = rule.weights[None, :] * np.exp(log_h)
        num = np.sum(terms * np.sin(np.pi * y), axis=1)
        den = np.sum(terms, axis=1)
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den)) and np.all(den > 0)):
            raise NonFiniteIntermediate("quadrature overflowed despite the exponent shift")
        out[late] = -num / den
    return out if out.ndim else float(out)


# -------------------------------------------------------------------- FFT


@lru_cache(maxsize=16)
def _fft_plan(n: int):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddle = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    return rev, twiddle


def fft(v, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis; the inverse carries the 1/N."""
    a = np.asarray(v, dtype=np.complex128)
    n = a.shape[-1]
    if n < 1 or n & (n - 1):
        raise BadLength(f"FFT length must be a power of two, got {n}")
    rev, twiddle = _fft_plan(n)
    if inverse:
        twiddle = twiddle.conj()
    a = a[..., rev]
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = twiddle[:: n // size]
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    if inverse:
        a = a / n
    return a


def ifft(v) -> np.ndarray:
    return fft(v, inverse=True)


def naive_dft(v, inverse: bool = False) -> np.ndarray:
    """O(N^2) transform, kept as an independent check on :func:`fft`."""
    v = np.asarray(v, dtype=np.complex128)
    n = v.shape[-1]
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    out = v @ mat.T
    return out / n if inverse else out


# ----------------------------------------------------------- NLS solver


@dataclass
class ReferenceField:
    """Gridded reference values; ``fields`` maps names to (len(t), len(x)) arrays."""

    t: np.ndarray
    x: np.ndarray
    fields: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.t.size, self.x.size)
        for name, arr in self.fields.items():
            if arr.shape != shape:
                raise ValueError(f"field {name} has shape {arr.shape}, grid is {shape}")

    def modulus(self) -> np.ndarray:
        if "value" in self.fields:
            return np.abs(self.fields["value"])
        return np.hypot(self.fields["psi"], self.fields["phi"])

    def with_periodic_endpoint(self) -> "ReferenceField":
        """Append x = x[0] + period as a copy of the first column."""
        period = self.metadata.get("period", NLS_PERIOD)
        x = np.append(self.x, self.x[0] + period)
        fields = {k: np.concatenate([v, v[:, :1]], axis=1) for k, v in self.fields.items()}
        return ReferenceField(self.t.copy(), x, fields, dict(self.metadata))

    def to_csv(self, path):
        names = list(self.fields)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"] + names)
            for i, ti in enumerate(self.t):
                for j, xj in enumerate(self.x):
                    w.writerow([repr(float(ti)), repr(float(xj))] + [repr(float(self.fields[n][i, j])) for n in names])

    def save(self, path):
        header = {
            "nt": int(self.t.size),
            "nx": int(self.x.size),
            "fields": list(self.fields),
            "metadata": self.metadata,
        }
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [GRID_MAGIC, struct.pack("<II", GRID_VERSION, len(hb)), hb]
        for arr in [self.t, self.x] + [self.fields[n] for n in self.fields]:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        blob = b"".join(parts)
        try:
            Path(path).write_bytes(blob + hashlib.sha256(blob).digest())
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ReferenceField":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(str(exc)) from exc
        if len(blob) < 48 or not blob.startswith(GRID_MAGIC):
            raise CorruptChecksum("not a reference grid file")
        payload, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(payload).digest() != digest:
            raise CorruptChecksum("checksum mismatch")
        version, hlen = struct.unpack_from("<II", payload, len(GRID_MAGIC))
        if version != GRID_VERSION:
            raise VersionMismatch(f"grid format {version}, expected {GRID_VERSION}")
        start = len(GRID_MAGIC) + 8
        header = json.loads(payload[start : start + hlen].decode("utf-8"))
        nt, nx, names = header["nt"], header["nx"], header["fields"]
        data = np.frombuffer(payload[start + hlen :], dtype="<f8").astype(np.float64)
        if data.size != nt + nx + len(names) * nt * nx:
            raise CorruptChecksum("grid payload does not match its header")
        t, x = data[:nt], data[nt : nt + nx]
        pos = nt + nx
        fields = {}
        for name in names:
            fields[name] = data[pos : pos + nt * nx].reshape(nt, nx)
            pos += nt * nx
        return cls(t, x, fields, header["metadata"])


GRID_MAGIC = b"SDNNGRID"
GRID_VERSION = 1


def nls_grid(n_modes: int, period: float = NLS_PERIOD) -> np.ndarray:
    return -period / 2 + period * np.arange(n_modes) / n_modes


def nls_spectral_solve(
    n_modes: int = 256,
    dt: float = NLS_T_END * 1e-4,
    t_end: float = NLS_T_END,
    record_times=None,
    *,
    u0=None,
    nonlinear: bool = True,
    dealias: bool = False,
    transform=None,
) -> ReferenceField:
    """Solve i u_t + 0.5 u_xx + |u|^2 u = 0 on [-5, 5) with periodic ends.

    RK4 runs on the Fourier coefficients; the cubic term is formed in
    physical space at every stage.  The solver lands exactly on every
    requested time by splitting each interval into equal steps no longer
    than ``dt`` (up to roundoff).  ``u0`` is a callable of x (default
    ``2 sech x``); ``transform`` swaps in another (forward, inverse) FFT pair.
    """
    if n_modes < 2 or n_modes & (n_modes - 1):
        raise BadLength(f"mode count must be a power of two, got {n_modes}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    fwd, inv = transform or (fft, ifft)
    x = nls_grid(n_modes)
    dx = NLS_PERIOD / n_modes
    k = 2 * np.pi / NLS_PERIOD * np.fft.fftfreq(n_modes, d=1.0 / n_modes)
    lin = -0.5j * k * k
    keep = np.abs(k) <= (2 * np.pi / NLS_PERIOD) * n_modes / 3 if dealias else None

    if record_times is None:
        record_times = [t_end]
    record_times = np.asarray(sorted(float(r) for r in record_times))
    if record_times.size and (record_times[0] < 0 or record_times[-1] > t_end + 1e-12):
        raise ValueError("record times must lie in [0, t_end]")

    init = u0(x) if u0 is not None else 2.0 / np.cosh(x)
    u_hat = fwd(np.asarray(init, dtype=np.complex128))

    def rhs(v_hat):
        out = lin * v_hat
        if nonlinear:
            u = inv(v_hat)
            nl = fwd(np.abs(u) ** 2 * u)
            if keep is not None:
                nl = nl * keep
            out = out + 1j * nl
        return out

    snapshots, masses = [], []
    t_now = 0.0
    steps_total = 0
    # overflow is reported as UnstableBlowup below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for t_rec in record_times:
            span = t_rec - t_now
            n_steps = int(np.ceil(span / dt - 1e-9)) if span > 0 else 0
            h = span / n_steps if n_steps else 0.0
            for s in range(n_steps):
                k1 = rhs(u_hat)
                k2 = rhs(u_hat + 0.5 * h * k1)
                k3 = rhs(u_hat + 0.5 * h * k2)
                k4 = rhs(u_hat + h * k3)
                u_hat = u_hat + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                if s % 256 == 0 and not np.all(np.isfinite(u_hat)):
                    raise UnstableBlowup(f"non-finite solution near t={t_now + (s + 1) * h}")
            steps_total += n_steps
            t_now = t_rec
            u = inv(u_hat)
            if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6:
                raise UnstableBlowup(f"|u| exceeded 1e6 by t={t_rec}")
            snapshots.append(u)
            masses.append(dx * float(np.sum(np.abs(u) ** 2)))

    u_rec = np.array(snapshots).reshape(len(record_times), n_modes)
    meta = {
        "method": "fourier-pseudospectral-rk4",
        "n_modes": n_modes,
        "dt": dt,
        "steps": steps_total,
        "nonlinear": nonlinear,
        "dealias": dealias,
        "period": NLS_PERIOD,
        "mass": masses,
    }
    return ReferenceField(record_times, x, {"psi": u_rec.real.copy(), "phi": u_rec.imag.copy()}, meta)


def nls_mass(field_: ReferenceField) -> np.ndarray:
    return np.asarray(field_.metadata["mass"])


def burgers_field(t_grid, x_grid, n_quad: int = 100) -> ReferenceField:
    T, X = np.meshgrid(t_grid, x_grid, indexing="ij")
    vals = burgers_exact(T, X, n_quad)
    meta = {"method": "cole-hopf-gauss-hermite", "n_quad": n_quad, "nu": BURGERS_NU}
    return ReferenceField(np.asarray(t_grid, float), np.asarray(x_grid, float), {"value": vals}, meta)
