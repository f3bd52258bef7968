"""Run configuration: a flat ``key = value`` file with a fixed key set.

Grammar, one entry per line::

    # comment
    key = value

Values are JSON literals (numbers, ``true``/``false``, ``[1, 2]``,
``"text"``); anything that is not valid JSON is taken as a bare string.
Unknown keys and duplicate keys are errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

PROBLEMS = ("regression", "burgers", "schrodinger")
TARGETS = ("quadratic", "piecewise_quadratic", "abs", "exp2d", "exp2d_jump", "image")

# paper settings used when a regression config leaves the grids unset
REGRESSION_GRIDS = {
    "quadratic": ([[-2.0, 2.0]], [1 / 50], [[-2.0, 2.0]], [1 / 30]),
    "piecewise_quadratic": ([[-2.0, 2.0]], [1 / 50], [[-2.0, 2.0]], [1 / 30]),
    "abs": ([[-2.0, 2.0]], [0.01], [[-5.0, 5.0]], [0.1]),
    "exp2d": ([[-1.0, 1.0]] * 2, [1 / 200] * 2, [[-1.0, 1.0]] * 2, [1 / 300] * 2),
    "exp2d_jump": ([[-1.0, 1.0]] * 2, [1 / 200] * 2, [[-1.0, 1.0]] * 2, [1 / 300] * 2),
    "image": ([[-1.0, 1.0]] * 2, [], [[-1.0, 1.0]] * 2, []),
}


@dataclass
class RunConfig:
    problem: str = "regression"
    target: str = "quadratic"
    image_path: str = ""
    widths: list = field(default_factory=lambda: [1, 10, 10, 10, 10, 1])
    activation: str = ""  # "" picks relu for regression, tanh for PDEs
    seed: int = 0
    epochs: int = 20000
    lr: float = 1e-3
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.5
    batch_size: int = 0  # 0 means full batch
    alpha: list = field(default_factory=list)  # empty means all zeros
    beta: float = -1.0  # negative picks the per-problem default
    epsilon_threshold: float = 1e-3
    prox_mode: bool = False
    loss_power_initial: int = 0  # 0 keeps the per-problem default
    loss_power_boundary: int = 0
    n_f: int = 10000
    n_0: int = 50
    n_b: int = 50
    n_data: int = 100
    train_box: list = field(default_factory=list)
    train_step: list = field(default_factory=list)
    test_box: list = field(default_factory=list)
    test_step: list = field(default_factory=list)
    test_t_step: float = 0.0  # PDE test grids; 0 picks the problem default
    test_x_step: float = 0.0
    n_quad: int = 100
    nls_modes: int = 256
    nls_dt: float = math.pi / 2 * 1e-4
    log_interval: int = 100
    patience: int = 0
    validation_fraction: float = 0.0
    output_dir: str = "runs/default"
    reproducible: bool = True

    def __post_init__(self):
        self.validate()

    # ---------------------------------------------------------- derived

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def alpha_vector(self) -> tuple:
        return tuple(self.alpha) if self.alpha else (0.0,) * self.depth

    @property
    def act(self) -> str:
        if self.activation:
            return self.activation
        return "relu" if self.problem == "regression" else "tanh"

    def grids(self):
        """(train_box, train_step, test_box, test_step) for regression runs."""
        d_box, d_step, d_tbox, d_tstep = REGRESSION_GRIDS[self.target]
        return (
            self.train_box or d_box,
            self.train_step or d_step,
            self.test_box or d_tbox,
            self.test_step or d_tstep,
        )

    def validate(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.problem not in PROBLEMS:
            bad(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.problem == "regression" and self.target not in TARGETS:
            bad(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.target == "image" and self.problem == "regression" and not self.image_path:
            bad("target = image needs image_path")
        if len(self.widths) < 2 or any(not isinstance(w, int) or w <= 0 for w in self.widths):
            bad(f"widths must be >= 2 positive integers, got {self.widths}")
        if self.activation not in ("", "relu", "tanh", "identity"):
            bad(f"unknown activation {self.activation!r}")
        if self.problem != "regression":
            want_out = 2 if self.problem == "schrodinger" else 1
            if self.widths[0] != 2 or self.widths[-1] != want_out:
                bad(f"{self.problem} needs widths [2, ..., {want_out}]")
            if self.act == "relu":
                bad("PDE problems need a twice differentiable activation")
        if self.alpha and len(self.alpha) != self.depth:
            bad(f"alpha has {len(self.alpha)} entries, widths imply {self.depth} weight matrices")
        if any(not isinstance(a, (int, float)) or a < 0 for a in self.alpha):
            bad("alpha entries must be nonnegative numbers")
        for name in ("epochs", "batch_size", "lr_decay_every", "patience", "n_f", "n_0", "n_b", "n_data"):
            if getattr(self, name) < 0:
                bad(f"{name} must be >= 0")
        if self.log_interval <= 0:
            bad("log_interval must be positive")
        if self.epochs % self.log_interval:
            bad("epochs must be a multiple of log_interval")
        if not self.lr > 0:
            bad("lr must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            bad("lr_decay_factor must be in (0, 1]")
        if self.epsilon_threshold < 0:
            bad("epsilon_threshold must be >= 0")
        for name in ("loss_power_initial", "loss_power_boundary"):
            if getattr(self, name) not in (0, 1, 2):
                bad(f"{name} must be 1 or 2 (0 for the default)")
        if not 0 <= self.validation_fraction < 1:
            bad("validation_fraction must be in [0, 1)")
        if not 50 <= self.n_quad <= 200:
            bad("n_quad must be in [50, 200]")
        if self.nls_modes < 2 or self.nls_modes & (self.nls_modes - 1):
            bad("nls_modes must be a power of two")
        if not self.nls_dt > 0:
            bad("nls_dt must be positive")

    def echo(self) -> str:
        return dump_config(self)

    def but(self, **changes) -> "RunConfig":
        return replace(self, **changes)


_KEYS = {f.name for f in fields(RunConfig)}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(value.strip())
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    _check_types(cfg, source)
    return cfg


def _check_types(cfg: RunConfig, source: str):
    defaults = RunConfig()
    for f in fields(RunConfig):
        val, ref = getattr(cfg, f.name), getattr(defaults, f.name)
        if isinstance(ref, bool):
            ok = isinstance(val, bool)
        elif isinstance(ref, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(ref, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
            if ok:
                setattr(cfg, f.name, float(val))
        elif isinstance(ref, list):
            ok = isinstance(val, list)
        else:
            ok = isinstance(val, str)
        if not ok:
            raise ConfigError(f"{source}: {f.name} has the wrong type ({val!r})")


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {json.dumps(v)}" for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"
