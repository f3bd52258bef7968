"""Experiment driver: training runs, evaluation, grid search, comparisons."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import reference as ref
from .config import RunConfig, dump_config
from .errors import BudgetExceeded, ConfigMismatch, MissingReference, NanLoss
from .model import Checkpoint, Mlp, init, load_checkpoint, save_checkpoint
from .optim import AdamState, RegSpec, SparsityReport, adam_step, relative_l2, sparsity_report, threshold
from .problems import (
    BURGERS_BOX,
    NLS_BOX,
    LossBreakdown,
    ProblemSpec,
    make_burgers_spec,
    make_schrodinger_spec,
    problem_loss,
)
from .sampling import latin_hypercube, make_rng, uniform_grid

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SDNN_OUTPUT_ROOT"
METRICS_HEADER = ["epoch", "loss_pde", "loss_0", "loss_b", "loss_reg", "total"]


# ------------------------------------------------------------ targets


def target_function(name: str, image_path: str = ""):
    if name == "quadratic":
        return lambda p: p[:, 0] ** 2
    if name == "piecewise_quadratic":
        return lambda p: p[:, 0] ** 2 + (p[:, 0] >= 0)
    if name == "abs":
        return lambda p: np.abs(p[:, 0])
    if name == "exp2d":
        return lambda p: np.exp(2 * p[:, 0] + p[:, 1] ** 2)
    if name == "exp2d_jump":
        return lambda p: np.exp(2 * p[:, 0] + p[:, 1] ** 2) + (p[:, 0] >= 0)
    if name == "image":
        return _image_sampler(image_path)
    raise ValueError(f"unknown target {name!r}")


def _image_sampler(path: str):
    """Nearest-pixel lookup of a grayscale image spread over [-1, 1]^2."""
    from PIL import Image

    img = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    rows, cols = img.shape

    def f(p):
        # x runs along columns, y along rows (top row is y = 1)
        j = np.clip(np.rint((p[:, 0] + 1) / 2 * (cols - 1)).astype(int), 0, cols - 1)
        i = np.clip(np.rint((1 - p[:, 1]) / 2 * (rows - 1)).astype(int), 0, rows - 1)
        return img[i, j]

    f.shape = img.shape
    return f


def _image_grid(f):
    rows, cols = f.shape
    xs = np.linspace(-1, 1, cols)
    ys = np.linspace(1, -1, rows)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


# ------------------------------------------------------ problem building


@dataclass
class Experiment:
    """Training problem plus held-out data, built deterministically from a config."""

    spec: ProblemSpec
    val_points: np.ndarray | None = None
    val_values: np.ndarray | None = None


def build_experiment(cfg: RunConfig) -> Experiment:
    reg = RegSpec(cfg.alpha_vector)
    beta = None if cfg.beta < 0 else cfg.beta
    powers = {
        "initial_power": cfg.loss_power_initial or None,
        "boundary_power": cfg.loss_power_boundary or None,
    }
    if cfg.problem == "regression":
        f = target_function(cfg.target, cfg.image_path)
        if cfg.target == "image":
            pts = _image_grid(f)[::2]
        else:
            box, step, _, _ = cfg.grids()
            pts = uniform_grid(box, step).points
        y = f(pts).reshape(-1, 1)
        val_pts = val_y = None
        if cfg.validation_fraction > 0:
            n_val = max(1, int(round(cfg.validation_fraction * len(pts))))
            perm = make_rng(cfg.seed + 101).permutation(len(pts))
            val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            val_pts, val_y = pts[val_idx], y[val_idx, 0]
            pts, y = pts[train_idx], y[train_idx]
        spec = ProblemSpec("regression", reg, pts, targets=y)
        return Experiment(spec, val_pts, val_y)

    if cfg.problem == "burgers":
        spec = make_burgers_spec(reg, n_f=cfg.n_f, n_data=cfg.n_data, seed=cfg.seed, beta=beta, **powers)
        exp = Experiment(spec)
        if cfg.validation_fraction > 0:
            n_val = max(100, int(round(cfg.validation_fraction * cfg.n_f)))
            vp = latin_hypercube(n_val, BURGERS_BOX, seed=cfg.seed + 101).points
            exp.val_points = vp
            exp.val_values = ref.burgers_exact(vp[:, 0], vp[:, 1], cfg.n_quad)
        return exp

    spec = make_schrodinger_spec(reg, n_f=cfg.n_f, n_0=cfg.n_0, n_b=cfg.n_b, seed=cfg.seed, beta=beta, **powers)
    exp = Experiment(spec)
    if cfg.validation_fraction > 0:
        n_times = 16
        times = np.sort(make_rng(cfg.seed + 101).uniform(0.0, NLS_BOX[0][1], n_times))
        field_ = ref.nls_spectral_solve(cfg.nls_modes, cfg.nls_dt, NLS_BOX[0][1], times)
        T, X = np.meshgrid(field_.t, field_.x, indexing="ij")
        exp.val_points = np.column_stack([T.ravel(), X.ravel()])
        exp.val_values = field_.modulus().ravel()
    return exp


def predict(net: Mlp, points: np.ndarray, problem: str) -> np.ndarray:
    out = net(points)
    if problem == "schrodinger":
        return np.hypot(out[:, 0], out[:, 1])
    return out[:, 0]


# -------------------------------------------------------------- test sets


def _pde_grid(cfg: RunConfig):
    if cfg.problem == "burgers":
        t = uniform_grid([BURGERS_BOX[0]], [cfg.test_t_step or 1 / 100]).points[:, 0]
        x = uniform_grid([BURGERS_BOX[1]], [cfg.test_x_step or 2 / 255]).points[:, 0]
        return t, x
    t_step = cfg.test_t_step or math.pi / 400
    t_end = NLS_BOX[0][1]
    n_t = int(round(t_end / t_step))
    t = t_step * np.arange(1, n_t + 1)  # (0, pi/2]: t = 0 is training data
    t[-1] = t_end
    x_step = cfg.test_x_step or 10 / 256
    n_x = int(round(ref.NLS_PERIOD / x_step))
    if n_x != cfg.nls_modes:
        raise MissingReference(f"test x step {x_step} must match the {cfg.nls_modes}-mode reference grid")
    return t, None


def reference_test_set(cfg: RunConfig, cache_dir: Path | None = None):
    """(points, reference values) of the test set; PDE references may be cached."""
    if cfg.problem == "regression":
        f = target_function(cfg.target, cfg.image_path)
        if cfg.target == "image":
            pts = _image_grid(f)
        else:
            _, _, box, step = cfg.grids()
            pts = uniform_grid(box, step).points
        return pts, f(pts)

    t, x = _pde_grid(cfg)
    cache = None
    if cache_dir is not None:
        key = f"{cfg.problem}-{cfg.test_t_step}-{cfg.test_x_step}-{cfg.n_quad}-{cfg.nls_modes}-{cfg.nls_dt!r}"
        cache = Path(cache_dir) / f"reference-{abs(hash_str(key)):016x}.grid"
    field_ = None
    if cache is not None and cache.exists():
        field_ = ref.ReferenceField.load(cache)
    if field_ is None:
        if cfg.problem == "burgers":
            field_ = ref.burgers_field(t, x, cfg.n_quad)
        else:
            field_ = ref.nls_spectral_solve(cfg.nls_modes, cfg.nls_dt, NLS_BOX[0][1], t).with_periodic_endpoint()
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            field_.save(cache)
    T, X = np.meshgrid(field_.t, field_.x, indexing="ij")
    pts = np.column_stack([T.ravel(), X.ravel()])
    vals = field_.fields["value"].ravel() if cfg.problem == "burgers" else field_.modulus().ravel()
    return pts, vals


def hash_str(text: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# ------------------------------------------------------------------ run


@dataclass
class RunReport:
    error: float
    error_raw: float
    sparsity: SparsityReport
    nonzero: int
    history: list
    wall_clock: float
    config: str
    checkpoint: str
    epochs_run: int
    val_error: float | None = None
    stopped_early: bool = False

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    def summary(self) -> str:
        return (
            f"relative L2 error {self.error:.3e} | sparsity {self.sparsity.format()}"
            f" | epochs {self.epochs_run} | {self.wall_clock:.1f}s"
        )


def resolve_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _write_metrics(path: Path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for epoch, lb in rows:
        w.writerow([epoch] + [repr(float(v)) for v in lb.as_row()])
    path.write_text(buf.getvalue())


def _monitor(net: Mlp, exp: Experiment, problem: str, full_loss: LossBreakdown) -> float:
    if exp.val_points is None:
        return full_loss.total
    return relative_l2(exp.val_values, predict(net, exp.val_points, problem))


def train(cfg: RunConfig, exp: Experiment | None = None):
    """Optimize the regularized loss; returns (net, adam state, history, stopped_early)."""
    exp = exp or build_experiment(cfg)
    spec = exp.spec
    net = init(cfg.widths, cfg.act, cfg.seed)
    reg = spec.reg
    state = AdamState.fresh(net, lr=cfg.lr, decay_every=cfg.lr_decay_every, decay_factor=cfg.lr_decay_factor)
    batched = cfg.problem == "regression" and 0 < cfg.batch_size < len(spec.points)
    batch_rng = make_rng(cfg.seed + 202)
    history = []
    best, since_best = math.inf, 0
    stopped = False

    def check(lb, epoch):
        if not math.isfinite(lb.total):
            raise NanLoss(epoch)

    epoch = 0
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        logging_now = epoch % cfg.log_interval == 0
        if batched:
            if logging_now:
                lb, _ = problem_loss(net, spec, with_grad=False)
                check(lb, epoch)
                history.append((epoch, lb))
            order = batch_rng.permutation(len(spec.points))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                sub = ProblemSpec("regression", reg, spec.points[idx], targets=spec.targets[idx])
                lb_b, grad = problem_loss(net, sub, reg_grad=not cfg.prox_mode)
                check(lb_b, epoch)
                adam_step(net, grad, state, reg, prox=cfg.prox_mode)
        else:
            lb, grad = problem_loss(net, spec, reg_grad=not cfg.prox_mode)
            check(lb, epoch)
            if logging_now:
                history.append((epoch, lb))
            adam_step(net, grad, state, reg, prox=cfg.prox_mode)

        if cfg.patience and logging_now:
            score = _monitor(net, exp, cfg.problem, lb)
            if score < best:
                best, since_best = score, 0
            else:
                since_best += cfg.log_interval
                if since_best >= cfg.patience:
                    stopped = True
                    epoch += 1
                    break
        if logging_now:
            log.debug("epoch %d total %.6e", epoch, lb.total)
    else:
        epoch = cfg.epochs

    lb, _ = problem_loss(net, spec, with_grad=False)
    check(lb, epoch)
    if not history or history[-1][0] != epoch:
        history.append((epoch, lb))
    return net, state, history, stopped, epoch


def run(cfg: RunConfig, write: bool = True) -> RunReport:
    """Train, threshold, score and (optionally) write all artifacts."""
    t0 = time.perf_counter()
    out = resolve_output(cfg)
    exp = build_experiment(cfg)
    net, state, history, stopped, epochs_run = train(cfg, exp)
    wall = time.perf_counter() - t0

    ckpt_path = out / "checkpoint.sdnn"
    m, v = state.flat_moments()
    ckpt = Checkpoint(net, cfg.seed, state.k, m, v)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, ckpt_path)
        _write_metrics(out / "metrics.csv", history)
        (out / "config.txt").write_text(dump_config(cfg))

    pts, y = reference_test_set(cfg, out if write else None)
    pruned = threshold(net, cfg.epsilon_threshold)
    err = relative_l2(y, predict(pruned, pts, cfg.problem))
    err_raw = relative_l2(y, predict(net, pts, cfg.problem))
    sp = sparsity_report(pruned, cfg.epsilon_threshold)
    val = None
    if exp.val_points is not None:
        val = relative_l2(exp.val_values, predict(pruned, exp.val_points, cfg.problem))

    report = RunReport(
        error=err,
        error_raw=err_raw,
        sparsity=sp,
        nonzero=sp.total_nonzero,
        history=[[e] + lb.as_row() for e, lb in history],
        wall_clock=wall,
        config=dump_config(cfg),
        checkpoint=str(ckpt_path),
        epochs_run=epochs_run,
        val_error=val,
        stopped_early=stopped,
    )
    if write:
        (out / "report.json").write_text(report.to_json())
    return report


def evaluate(checkpoint, cfg: RunConfig, cache_dir=None):
    """Relative L2 test error and sparsity of a saved network (thresholded first)."""
    net = load_checkpoint(checkpoint).net if not isinstance(checkpoint, Mlp) else checkpoint
    pts, y = reference_test_set(cfg, cache_dir)
    pruned = threshold(net, cfg.epsilon_threshold)
    err = relative_l2(y, predict(pruned, pts, cfg.problem))
    return err, sparsity_report(pruned, cfg.epsilon_threshold)


# ------------------------------------------------------------ grid search


@dataclass
class GridTrial:
    layer: int
    index: int
    alpha: tuple
    val_error: float
    nonzero: int
    zero_fraction: float
    score: float
    selected: bool = False


@dataclass
class GridResult:
    best: RunConfig
    trace: list = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "candidate", "alpha", "val_error", "nonzero", "zero_fraction", "score", "selected"])
        for tr in self.trace:
            w.writerow([tr.layer, tr.index, json.dumps(list(tr.alpha)), repr(tr.val_error), tr.nonzero,
                        repr(tr.zero_fraction), repr(tr.score), int(tr.selected)])
        return buf.getvalue()


def _trial(cfg: RunConfig):
    rep = run(cfg, write=False)
    return rep.val_error, rep.sparsity


def grid_search(
    base: RunConfig,
    candidates,
    max_runs: int = 1000,
    penalty: float = 0.0,
    sparsity_floor: float | None = None,
    workers: int = 1,
) -> GridResult:
    """Choose alpha layer by layer, from the output layer back to the input.

    ``candidates[i]`` lists the values tried for weight matrix ``i + 1``.
    Each candidate is scored by its validation relative L2 error plus
    ``penalty * nonzero_fraction``; candidates whose mean zero percentage
    is below ``sparsity_floor`` are skipped unless nothing passes.
    """
    if len(candidates) != base.depth:
        raise ConfigMismatch(f"{len(candidates)} candidate lists for {base.depth} layers")
    if any(len(c) == 0 for c in candidates):
        raise ValueError("every layer needs at least one candidate")
    total = sum(len(c) for c in candidates)
    if total > max_runs:
        raise BudgetExceeded(f"grid search needs {total} runs, budget is {max_runs}")
    if base.validation_fraction == 0:
        base = base.but(validation_fraction=0.2)

    alpha = list(base.alpha_vector)
    trace = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for layer in range(base.depth - 1, -1, -1):
            cfgs = []
            for value in candidates[layer]:
                trial_alpha = list(alpha)
                trial_alpha[layer] = float(value)
                cfgs.append(base.but(alpha=trial_alpha))
            results = list(pool.map(_trial, cfgs)) if pool else [_trial(c) for c in cfgs]
            layer_trials = []
            for idx, (cfg, (val, sp)) in enumerate(zip(cfgs, results)):
                nz_frac = sp.total_nonzero / sum(sp.sizes)
                tr = GridTrial(layer + 1, idx, tuple(cfg.alpha), val, sp.total_nonzero,
                               1.0 - nz_frac, val + penalty * nz_frac)
                layer_trials.append((tr, sp))
            eligible = [t for t, sp in layer_trials if sparsity_floor is None or sp.mean_zero_percent >= sparsity_floor]
            pick = min(eligible or [t for t, _ in layer_trials], key=lambda t: (t.score, t.index))
            pick.selected = True
            alpha = list(pick.alpha)
            trace.extend(t for t, _ in layer_trials)
    finally:
        if pool:
            pool.shutdown()
    return GridResult(base.but(alpha=alpha), trace)


# -------------------------------------------------------------- compare


_COMPARE_IGNORED = {"alpha", "output_dir"}


def check_comparable(a: RunConfig, b: RunConfig):
    diffs = [f.name for f in fields(RunConfig) if f.name not in _COMPARE_IGNORED and getattr(a, f.name) != getattr(b, f.name)]
    if diffs:
        raise ConfigMismatch(f"configs differ in more than alpha: {diffs}")


@dataclass
class Comparison:
    rows: list  # (label, alpha, error, zero percents, nonzero)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "alpha", "relative_l2", "sparsity_percent", "nonzero"])
        for label, alpha, err, zeros, nnz in self.rows:
            w.writerow([label, json.dumps(list(alpha)), repr(err), json.dumps([round(z, 4) for z in zeros]), nnz])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [["model", "alpha", "relative L2", "sparsity of weight matrices", "nonzero"]]
        for label, alpha, err, zeros, nnz in self.rows:
            cells.append([
                label,
                "[" + ", ".join(f"{a:g}" for a in alpha) + "]",
                f"{err:.3e}",
                "[" + ", ".join(f"{z:.1f}%" for z in zeros) + "]",
                str(nnz),
            ])
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells) + "\n"


def compare(cfg_a: RunConfig, cfg_b: RunConfig, labels=("A", "B"), write: bool = True) -> Comparison:
    check_comparable(cfg_a, cfg_b)
    rows = []
    for label, cfg in zip(labels, (cfg_a, cfg_b)):
        rep = run(cfg, write=write)
        rows.append((label, cfg.alpha_vector, rep.error, rep.sparsity.zero_percent, rep.nonzero))
    return Comparison(rows)
