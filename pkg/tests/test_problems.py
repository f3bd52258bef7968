import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdnn.errors import DomainViolation, EmptyData, UnsupportedDerivative
from sdnn.jet import forward_jet
from sdnn.model import Mlp, init
from sdnn.optim import RegSpec
from sdnn.problems import (
    BURGERS_NU,
    LossBreakdown,
    ProblemSpec,
    burgers_loss,
    burgers_residual,
    make_burgers_spec,
    make_schrodinger_spec,
    problem_loss,
    regression_loss,
    schrodinger_loss,
    schrodinger_residual,
)

from conftest import fd_gradient, max_rel_err, random_net


def zero_net(widths):
    net = init(widths, seed=0)
    return net.with_flat(np.zeros(net.n_params))


def picks_x(n_out=1, coeff=1.0):
    """Affine net u(t, x) = coeff * x in the first output."""
    W = np.zeros((n_out, 2))
    W[0, 1] = coeff
    return Mlp([W], [np.zeros(n_out)], "identity")


def pinn_objective(net, spec):
    """Independent transcription of the unregularized PINN objective."""
    t0 = np.zeros(len(spec.x0))
    if spec.kind == "burgers":
        j = forward_jet(net, spec.points, ("t", "x", "xx"))
        r = j.d_t[:, 0] + j.value[:, 0] * j.d_x[:, 0] - spec.nu * j.d_xx[:, 0]
        l0 = np.mean((net(np.column_stack([t0, spec.x0]))[:, 0] - spec.u0) ** 2)
        lb = sum(np.mean(np.abs(net(np.column_stack([tb, np.full_like(tb, xb)]))[:, 0]))
                 for tb, xb in zip(spec.t_b, (-1.0, 1.0)) if len(tb))
        return np.mean(r**2) + spec.beta * (l0 + lb)
    j = forward_jet(net, spec.points, ("t", "xx"))
    u = j.value[:, 0] + 1j * j.value[:, 1]
    u_t = j.d_t[:, 0] + 1j * j.d_t[:, 1]
    u_xx = j.d_xx[:, 0] + 1j * j.d_xx[:, 1]
    f = 1j * u_t + 0.5 * u_xx + np.abs(u) ** 2 * u
    out0 = net(np.column_stack([t0, spec.x0]))
    l0 = np.mean(np.sum((out0 - spec.u0) ** 2, axis=1))
    tb = spec.t_b[0]
    jl = forward_jet(net, np.column_stack([tb, np.full_like(tb, -5.0)]), ("x",))
    jr = forward_jet(net, np.column_stack([tb, np.full_like(tb, 5.0)]), ("x",))
    lb = np.mean(np.sum((jl.value - jr.value) ** 2, axis=1)) + np.mean(np.sum((jl.d_x - jr.d_x) ** 2, axis=1))
    return np.mean(np.abs(f) ** 2) + spec.beta * (l0 + lb)


def small_burgers(seed=0, alpha=(0.0, 0.0, 0.0), depth=None):
    if depth is not None:
        alpha = (0.0,) * depth
    return make_burgers_spec(RegSpec(alpha), n_f=24, n_data=12, seed=seed)


def small_nls(seed=0, alpha=(0.0, 0.0, 0.0), depth=None):
    if depth is not None:
        alpha = (0.0,) * depth
    return make_schrodinger_spec(RegSpec(alpha), n_f=24, n_0=8, n_b=8, seed=seed)


def check_gradient(net, spec, tol):
    lb, g = problem_loss(net, spec)
    fd = fd_gradient(lambda th: problem_loss(net.with_flat(th), spec, with_grad=False)[0].total, net.flatten())
    return max_rel_err(g.flatten(), fd, floor=1e-3) <= tol


class TestRegression:
    def test_perfect_fit(self):
        net = random_net([1, 4, 1], seed=1)
        x = np.linspace(-1, 1, 9)[:, None]
        lb, _ = regression_loss(net, x, net(x), RegSpec.zeros(2))
        assert lb.loss_pde == 0.0

    def test_single_point(self):
        lb, _ = regression_loss(zero_net([1, 3, 1]), [[0.2]], [2.0], RegSpec.zeros(2))
        assert lb.loss_pde == pytest.approx(4.0)

    def test_gradient(self):
        net = random_net([1, 6, 6, 1], seed=2, activation="tanh")
        x = np.linspace(-2, 2, 15)[:, None]
        spec = ProblemSpec("regression", RegSpec([1e-3, 1e-2, 1e-1]), x, targets=x**2)
        assert check_gradient(net, spec, 1e-5)

    def test_relu_gradient(self):
        net = random_net([1, 6, 6, 1], seed=3, activation="relu")
        x = np.linspace(-2, 2, 15)[:, None] + 0.013
        spec = ProblemSpec("regression", RegSpec.zeros(3), x, targets=np.abs(x))
        assert check_gradient(net, spec, 1e-5)

    def test_total(self):
        net = random_net([1, 3, 1], seed=4)
        lb, _ = regression_loss(net, [[0.1], [0.2]], [1.0, 2.0], RegSpec([0.5, 0.5]))
        assert lb.total == pytest.approx(lb.loss_pde + lb.loss_reg, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyData):
            regression_loss(random_net([1, 3, 1]), np.zeros((0, 1)), np.zeros(0), RegSpec.zeros(2))


class TestBurgers:
    def test_zero_net_residual(self):
        assert np.all(burgers_residual(zero_net([2, 5, 1]), [[0.3, 0.1], [0.9, -0.7]]) == 0)

    def test_affine_residual(self):
        assert burgers_residual(picks_x(), [[0.2, 0.5]])[0] == pytest.approx(0.5)

    def test_residual_matches_fd(self):
        net = random_net([2, 8, 8, 1], seed=5)
        t, x, h = 0.3, -0.4, 1e-4
        f = lambda tt, xx: net(np.array([[tt, xx]]))[0, 0]
        ut = (f(t + h, x) - f(t - h, x)) / (2 * h)
        ux = (f(t, x + h) - f(t, x - h)) / (2 * h)
        uxx = (f(t, x + h) - 2 * f(t, x) + f(t, x - h)) / h**2
        fd = ut + f(t, x) * ux - BURGERS_NU * uxx
        assert abs(burgers_residual(net, [[t, x]])[0] - fd) <= 1e-4 * max(1.0, abs(fd))

    def test_relu_rejected(self):
        with pytest.raises(UnsupportedDerivative):
            burgers_residual(random_net([2, 4, 1], activation="relu"), [[0.1, 0.1]])

    def test_zero_net_loss(self):
        spec = small_burgers()
        lb, _ = burgers_loss(zero_net([2, 5, 5, 1]), spec)
        assert lb.loss_pde == 0 and lb.loss_b == 0
        assert lb.loss_0 == pytest.approx(np.mean(np.sin(np.pi * spec.x0) ** 2))

    def test_single_collocation_point(self):
        net = random_net([2, 5, 1], seed=6)
        spec = small_burgers(depth=2)
        spec.points = np.array([[0.4, 0.2]])
        r = burgers_residual(net, spec.points)[0]
        assert burgers_loss(net, spec)[0].loss_pde == pytest.approx(r * r)

    def test_boundary_means_are_separate(self):
        # constant net u = 1: each wall contributes mean |1| = 1
        net = Mlp([np.zeros((1, 2))], [np.ones(1)], "identity")
        spec = small_burgers(depth=1)
        assert burgers_loss(net, spec)[0].loss_b == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient(self, seed):
        net = random_net([2, 8, 8, 1], seed=seed + 10)
        assert check_gradient(net, small_burgers(seed, alpha=(1e-3, 1e-2, 1e-1)), 1e-4)

    def test_domain_violation(self):
        spec = small_burgers()
        spec.points = np.array([[0.5, 1.5]])
        with pytest.raises(DomainViolation):
            burgers_loss(random_net([2, 3, 1]), spec)

    def test_empty(self):
        spec = small_burgers()
        spec.points = np.zeros((0, 2))
        with pytest.raises(EmptyData):
            burgers_loss(random_net([2, 3, 1]), spec)

    def test_pools_and_counts(self):
        spec = make_burgers_spec(RegSpec.zeros(1), n_f=50, n_data=100, seed=3)
        assert len(spec.x0) + sum(len(t) for t in spec.t_b) == 100
        assert spec.points.shape == (50, 2)

    def test_squared_boundary_override(self):
        net = Mlp([np.zeros((1, 2))], [np.full(1, 3.0)], "identity")
        spec = make_burgers_spec(RegSpec.zeros(1), n_f=10, n_data=20, boundary_power=2)
        assert burgers_loss(net, spec)[0].loss_b == pytest.approx(18.0)


class TestSchrodinger:
    def test_zero_net_residual(self):
        re, im = schrodinger_residual(zero_net([2, 4, 2]), [[0.1, 0.3]])
        assert re[0] == 0 and im[0] == 0

    def test_affine_residual(self):
        re, im = schrodinger_residual(picks_x(n_out=2), [[0.2, 1.0]])
        assert (re[0], im[0]) == pytest.approx((1.0, 0.0))

    def test_residual_matches_fd(self):
        net = random_net([2, 8, 8, 2], seed=7)
        t, x, h = 0.5, 1.3, 1e-4
        f = lambda tt, xx: net(np.array([[tt, xx]]))[0]
        u = f(t, x)
        ut = (f(t + h, x) - f(t - h, x)) / (2 * h)
        uxx = (f(t, x + h) - 2 * u + f(t, x - h)) / h**2
        rho = u @ u
        fd = (-ut[1] + 0.5 * uxx[0] + rho * u[0], ut[0] + 0.5 * uxx[1] + rho * u[1])
        re, im = schrodinger_residual(net, [[t, x]])
        assert re[0] == pytest.approx(fd[0], rel=1e-4, abs=1e-4)
        assert im[0] == pytest.approx(fd[1], rel=1e-4, abs=1e-4)

    def test_zero_net_loss(self):
        spec = small_nls()
        lb, _ = schrodinger_loss(zero_net([2, 4, 4, 2]), spec)
        assert lb.loss_b == 0 and lb.loss_pde == 0
        assert lb.loss_0 == pytest.approx(np.mean(4 / np.cosh(spec.x0) ** 2))

    def test_constant_net_is_periodic(self):
        net = Mlp([np.zeros((2, 2))], [np.array([0.3, -0.2])], "identity")
        assert schrodinger_loss(net, small_nls(depth=1))[0].loss_b == 0.0

    def test_boundary_compares_derivatives(self):
        # u = (x, 0): values differ by 10 at the walls, slopes agree
        lb, _ = schrodinger_loss(picks_x(n_out=2), small_nls(depth=1))
        assert lb.loss_b == pytest.approx(100.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient(self, seed):
        net = random_net([2, 8, 8, 2], seed=seed + 20)
        assert check_gradient(net, small_nls(seed, alpha=(1e-3, 1e-2, 1e-1)), 1e-4)

    def test_domain_violation(self):
        spec = small_nls(depth=2)
        spec.x0 = np.array([6.0])
        spec.u0 = np.array([[0.0, 0.0]])
        with pytest.raises(DomainViolation):
            schrodinger_loss(random_net([2, 3, 2]), spec)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["burgers", "schrodinger"]))
def test_degenerates_to_pinn(seed, kind):
    n_out = 1 if kind == "burgers" else 2
    net = random_net([2, 6, 6, n_out], seed=seed)
    spec = small_burgers(seed) if kind == "burgers" else small_nls(seed)
    lb, _ = problem_loss(net, spec, with_grad=False)
    assert lb.loss_reg == 0.0
    assert abs(lb.total - pinn_objective(net, spec)) <= 1e-12 * max(1.0, abs(lb.total))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["regression", "burgers", "schrodinger"]))
def test_breakdown_recombines_and_is_nonnegative(seed, kind):
    alpha = (1e-3, 1e-2, 1e-1)
    if kind == "regression":
        net = random_net([1, 6, 6, 1], seed=seed)
        x = np.linspace(-1, 1, 11)[:, None]
        spec = ProblemSpec("regression", RegSpec(alpha), x, targets=np.sin(3 * x))
    elif kind == "burgers":
        net, spec = random_net([2, 6, 6, 1], seed=seed), small_burgers(seed, alpha)
    else:
        net, spec = random_net([2, 6, 6, 2], seed=seed), small_nls(seed, alpha)
    lb, _ = problem_loss(net, spec, with_grad=False)
    assert min(lb.loss_pde, lb.loss_0, lb.loss_b, lb.loss_reg) >= 0
    expect = lb.loss_pde + spec.beta * (lb.loss_0 + lb.loss_b) + lb.loss_reg
    assert abs(lb.total - expect) <= 1e-12 * max(1.0, expect)


def test_breakdown_row_order():
    lb = LossBreakdown(1.0, 2.0, 3.0, 4.0, beta=10.0)
    assert lb.as_row() == [1.0, 2.0, 3.0, 4.0, 1.0 + 50.0 + 4.0]
