"""Loss assembly for the three experiment families.

Every loss returns a :class:`LossBreakdown` and, on request, the exact
gradient with respect to all network parameters.  The total is always::

    loss_pde + beta * (loss_0 + loss_b) + loss_reg

with ``loss_pde`` holding the data misfit for plain regression (where
``beta`` is unused).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainViolation, EmptyData, LengthMismatch
from .jet import ParamGrad, backward_params, forward_jet, record
from .model import Mlp
from .optim import RegSpec, l1_penalty, l1_subgradient
from .sampling import latin_hypercube, make_rng, split_boundary_initial

KINDS = ("regression", "burgers", "schrodinger")

BURGERS_NU = 0.01 / np.pi
BURGERS_BOX = ((0.0, 1.0), (-1.0, 1.0))
NLS_BOX = ((0.0, np.pi / 2), (-5.0, 5.0))

DEFAULT_BETA = {"burgers": 20.0, "schrodinger": 10.0, "regression": 0.0}
# (initial, boundary) discrepancy exponents as printed for each problem
DEFAULT_POWERS = {"burgers": (2, 1), "schrodinger": (2, 2), "regression": (2, 2)}


@dataclass
class LossBreakdown:
    loss_pde: float
    loss_0: float = 0.0
    loss_b: float = 0.0
    loss_reg: float = 0.0
    beta: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.loss_pde + self.beta * (self.loss_0 + self.loss_b) + self.loss_reg

    def as_row(self):
        return [self.loss_pde, self.loss_0, self.loss_b, self.loss_reg, self.total]


@dataclass
class ProblemSpec:
    """Training data and weights for one loss.

    regression:  ``points`` (N, d_0) inputs, ``targets`` (N, d_out)
    burgers:     ``points`` interior (t, x); ``x0``/``u0`` initial data;
                 ``t_b`` = [times on x=-1, times on x=+1]
    schrodinger: ``points`` interior; ``x0``/``u0`` with u0 of shape (N_0, 2);
                 ``t_b`` = [times at which x=-5 and x=+5 are compared]
    """

    kind: str
    reg: RegSpec
    points: np.ndarray
    targets: np.ndarray | None = None
    x0: np.ndarray | None = None
    u0: np.ndarray | None = None
    t_b: list[np.ndarray] = field(default_factory=list)
    beta: float | None = None
    nu: float = BURGERS_NU
    initial_power: int | None = None
    boundary_power: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.beta is None:
            self.beta = DEFAULT_BETA[self.kind]
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        p0, pb = DEFAULT_POWERS[self.kind]
        self.initial_power = p0 if self.initial_power is None else int(self.initial_power)
        self.boundary_power = pb if self.boundary_power is None else int(self.boundary_power)
        for p in (self.initial_power, self.boundary_power):
            if p not in (1, 2):
                raise ValueError("loss_power must be 1 or 2")
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))


# ---------------------------------------------------------------- helpers


def _power_term(err: np.ndarray, p: int, n: int):
    """mean |err|^p over rows (modulus across columns) and its cotangent."""
    mod = np.sqrt(np.sum(err * err, axis=1, keepdims=True))
    if p == 2:
        return float(np.sum(mod * mod) / n), 2.0 * err / n
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mod > 0, err / mod, 0.0)
    return float(np.sum(mod) / n), unit / n


def _check_box(pts: np.ndarray, box, what: str):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    tol = 1e-12
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise DomainViolation(f"{what} points leave the domain {box}")


def _regularize(net, reg, grad, with_grad, reg_grad):
    loss_reg = l1_penalty(net, reg)
    if with_grad and reg_grad and reg.active:
        grad = grad + l1_subgradient(net, reg)
    return loss_reg, grad


def _accumulate(total: ParamGrad | None, part: ParamGrad) -> ParamGrad:
    return part if total is None else total + part


# ------------------------------------------------------------- regression


def regression_loss(net: Mlp, points, targets, reg: RegSpec, with_grad=True, reg_grad=True):
    """Mean squared misfit plus the layer-wise L1 penalty."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 1 and net.widths[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    n = pts.shape[0]
    if n == 0 or pts.size == 0:
        raise EmptyData("no training points")
    y = np.asarray(targets, dtype=np.float64).reshape(n, -1)
    if y.shape[0] != n:
        raise LengthMismatch(f"{n} points vs {y.shape[0]} targets")
    reg.check(net)
    if with_grad:
        tape = record(net, pts)
        u = tape.output.value
    else:
        u = forward_jet(net, pts).value
    err = u - y
    mse = float(np.sum(err * err) / n)
    grad = backward_params(tape, {"value": 2.0 * err / n}) if with_grad else None
    loss_reg, grad = _regularize(net, reg, grad, with_grad, reg_grad)
    return LossBreakdown(mse, loss_reg=loss_reg), grad


# ---------------------------------------------------------------- Burgers


def burgers_residual(net: Mlp, points, nu: float = BURGERS_NU) -> np.ndarray:
    """``u_t + u u_x - nu u_xx`` at each (t, x) row of ``points``."""
    jet = forward_jet(net, points, ("t", "x", "xx"))
    u = jet.value[:, 0]
    return jet.d_t[:, 0] + u * jet.d_x[:, 0] - nu * jet.d_xx[:, 0]


def burgers_loss(net: Mlp, spec: ProblemSpec, with_grad=True, reg_grad=True):
    if spec.kind != "burgers":
        raise ValueError("spec is not a Burgers problem")
    pts = spec.points
    if pts.size == 0 or spec.x0 is None or len(spec.x0) == 0:
        raise EmptyData("Burgers loss needs interior and initial points")
    _check_box(pts, BURGERS_BOX, "collocation")
    spec.reg.check(net)
    grad = None

    # PDE residual
    tape = record(net, pts, ("t", "x", "xx"))
    jet = tape.output
    u, ut, ux, uxx = (a[:, 0] for a in (jet.value, jet.d_t, jet.d_x, jet.d_xx))
    r = ut + u * ux - spec.nu * uxx
    n_f = r.size
    loss_pde = float(np.dot(r, r) / n_f)
    if with_grad:
        c = (2.0 / n_f) * r
        cot = {
            "value": (c * ux)[:, None],
            "d_t": c[:, None],
            "d_x": (c * u)[:, None],
            "d_xx": (-spec.nu * c)[:, None],
        }
        grad = backward_params(tape, cot)

    # initial line t = 0
    x0 = np.asarray(spec.x0, dtype=np.float64).ravel()
    u0 = np.asarray(spec.u0, dtype=np.float64).reshape(-1, 1)
    p0 = np.column_stack([np.zeros_like(x0), x0])
    _check_box(p0, BURGERS_BOX, "initial")
    loss_0, grad = _data_term(net, p0, u0, spec.initial_power, spec.beta, with_grad, grad)

    # x = -1 and x = +1, separate means
    loss_b = 0.0
    for t_side, x_side in zip(spec.t_b, (-1.0, 1.0)):
        t_side = np.asarray(t_side, dtype=np.float64).ravel()
        if t_side.size == 0:
            continue
        pb = np.column_stack([t_side, np.full_like(t_side, x_side)])
        _check_box(pb, BURGERS_BOX, "boundary")
        part, grad = _data_term(net, pb, np.zeros((t_side.size, 1)), spec.boundary_power, spec.beta, with_grad, grad)
        loss_b += part

    loss_reg, grad = _regularize(net, spec.reg, grad, with_grad, reg_grad)
    return LossBreakdown(loss_pde, loss_0, loss_b, loss_reg, spec.beta), grad


def _data_term(net, pts, target, power, weight, with_grad, grad):
    if with_grad:
        tape = record(net, pts)
        err = tape.output.value - target
        loss, cot = _power_term(err, power, pts.shape[0])
        if weight != 0:
            grad = _accumulate(grad, backward_params(tape, {"value": weight * cot}))
    else:
        err = forward_jet(net, pts).value - target
        loss, _ = _power_term(err, power, pts.shape[0])
    return loss, grad


# ------------------------------------------------------------ Schrodinger


def schrodinger_residual(net: Mlp, points):
    """Real and imaginary parts of ``i u_t + 0.5 u_xx + |u|^2 u``."""
    jet = forward_jet(net, points, ("t", "x", "xx"))
    return _nls_parts(jet)[:2]


def _nls_parts(jet):
    psi, phi = jet.value[:, 0], jet.value[:, 1]
    rho = psi * psi + phi * phi
    re = -jet.d_t[:, 1] + 0.5 * jet.d_xx[:, 0] + rho * psi
    im = jet.d_t[:, 0] + 0.5 * jet.d_xx[:, 1] + rho * phi
    return re, im, psi, phi, rho


def schrodinger_loss(net: Mlp, spec: ProblemSpec, with_grad=True, reg_grad=True):
    if spec.kind != "schrodinger":
        raise ValueError("spec is not a Schrodinger problem")
    pts = spec.points
    if pts.size == 0 or spec.x0 is None or len(spec.x0) == 0:
        raise EmptyData("Schrodinger loss needs interior and initial points")
    _check_box(pts, NLS_BOX, "collocation")
    spec.reg.check(net)
    grad = None

    tape = record(net, pts, ("t", "x", "xx"))
    re, im, psi, phi, rho = _nls_parts(tape.output)
    n_f = re.size
    loss_pde = float((np.dot(re, re) + np.dot(im, im)) / n_f)
    if with_grad:
        cr = (2.0 / n_f) * re
        ci = (2.0 / n_f) * im
        cross = 2.0 * psi * phi
        cot = {
            "value": np.column_stack([cr * (rho + 2 * psi * psi) + ci * cross, cr * cross + ci * (rho + 2 * phi * phi)]),
            "d_t": np.column_stack([ci, -cr]),
            "d_xx": np.column_stack([0.5 * cr, 0.5 * ci]),
        }
        grad = backward_params(tape, cot)

    x0 = np.asarray(spec.x0, dtype=np.float64).ravel()
    u0 = np.asarray(spec.u0, dtype=np.float64).reshape(-1, 2)
    p0 = np.column_stack([np.zeros_like(x0), x0])
    _check_box(p0, NLS_BOX, "initial")
    loss_0, grad = _data_term(net, p0, u0, spec.initial_power, spec.beta, with_grad, grad)

    loss_b = 0.0
    if spec.t_b:
        tb = np.asarray(spec.t_b[0], dtype=np.float64).ravel()
        left = np.column_stack([tb, np.full_like(tb, -5.0)])
        right = np.column_stack([tb, np.full_like(tb, 5.0)])
        _check_box(left, NLS_BOX, "boundary")
        n_b = tb.size
        if with_grad:
            tl, tr = record(net, left, ("x",)), record(net, right, ("x",))
            jl, jr = tl.output, tr.output
        else:
            jl, jr = forward_jet(net, left, ("x",)), forward_jet(net, right, ("x",))
        dv = jl.value - jr.value
        dd = jl.d_x - jr.d_x
        lv, cv = _power_term(dv, spec.boundary_power, n_b)
        ld, cd = _power_term(dd, spec.boundary_power, n_b)
        loss_b = lv + ld
        if with_grad and spec.beta != 0:
            b = spec.beta
            grad = grad + backward_params(tl, {"value": b * cv, "d_x": b * cd})
            grad = grad + backward_params(tr, {"value": -b * cv, "d_x": -b * cd})

    loss_reg, grad = _regularize(net, spec.reg, grad, with_grad, reg_grad)
    return LossBreakdown(loss_pde, loss_0, loss_b, loss_reg, spec.beta), grad


def problem_loss(net: Mlp, spec: ProblemSpec, with_grad=True, reg_grad=True):
    if spec.kind == "regression":
        return regression_loss(net, spec.points, spec.targets, spec.reg, with_grad, reg_grad)
    if spec.kind == "burgers":
        return burgers_loss(net, spec, with_grad, reg_grad)
    return schrodinger_loss(net, spec, with_grad, reg_grad)


# ------------------------------------------------------ training data sets


def burgers_initial(x):
    return -np.sin(np.pi * np.asarray(x, dtype=np.float64))


def nls_initial(x):
    x = np.asarray(x, dtype=np.float64)
    return np.column_stack([2.0 / np.cosh(x), np.zeros_like(x)])


def make_burgers_spec(reg: RegSpec, n_f=10_000, n_data=100, seed=0, beta=None, **kwargs) -> ProblemSpec:
    """LHS collocation points plus ``n_data`` points drawn without replacement
    from the initial line and both walls.

    The candidate pools are the test-grid nodes on each line (256 in x on
    t = 0, 101 in t on each wall), so the per-line counts vary with the seed.
    """
    interior = latin_hypercube(n_f, BURGERS_BOX, seed=seed).points
    pool_x0 = np.linspace(-1.0, 1.0, 256)
    pool_t = np.linspace(0.0, 1.0, 101)
    (x0, tb1, tb2), _ = split_boundary_initial(n_data, [pool_x0, pool_t, pool_t], seed=seed + 1)
    return ProblemSpec(
        "burgers", reg, interior, x0=x0, u0=burgers_initial(x0), t_b=[tb1, tb2], beta=beta, **kwargs
    )


def make_schrodinger_spec(reg: RegSpec, n_f=20_000, n_0=50, n_b=50, seed=0, beta=None, **kwargs) -> ProblemSpec:
    interior = latin_hypercube(n_f, NLS_BOX, seed=seed).points
    x0 = latin_hypercube(n_0, [NLS_BOX[1]], seed=seed + 1).points[:, 0]
    tb = latin_hypercube(n_b, [NLS_BOX[0]], seed=seed + 2).points[:, 0]
    return ProblemSpec(
        "schrodinger", reg, interior, x0=x0, u0=nls_initial(x0), t_b=[tb], beta=beta, **kwargs
    )


def random_subset(n_total: int, n: int, seed: int) -> np.ndarray:
    return np.sort(make_rng(seed).choice(n_total, size=n, replace=False))
