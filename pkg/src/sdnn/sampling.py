"""Point sets for training and testing: Latin hypercube samples and grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadBox, BadStep, PoolTooSmall


def make_rng(seed) -> np.random.Generator:
    """Seeded generator on the counter-based Philox bit generator.

    Philox output depends only on (key, counter), so streams are identical
    across platforms and numpy builds.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class PointSet:
    points: np.ndarray  # shape (n, d)
    box: np.ndarray  # shape (d, 2): [lo, hi] per coordinate
    seed: int | None = None
    names: tuple[str, ...] | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path):
        names = self.names or tuple(f"x{j}" for j in range(self.dim))
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])


def _as_box(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    if b.ndim == 1:
        b = b.reshape(1, 2)
    if b.ndim != 2 or b.shape[1] != 2:
        raise BadBox(f"box must be [lo, hi] pairs, got shape {b.shape}")
    if np.any(b[:, 0] >= b[:, 1]):
        raise BadBox(f"empty box {b.tolist()}")
    return b


def latin_hypercube(n: int, box, seed: int = 0, names=None) -> PointSet:
    """Plain LHS: one sample per stratum in every coordinate, strata shuffled
    independently per coordinate."""
    if n < 1:
        raise ValueError("n must be positive")
    b = _as_box(box)
    rng = make_rng(seed)
    d = b.shape[0]
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    pts = b[:, 0] + u * (b[:, 1] - b[:, 0])
    # guard against hi being hit by roundoff
    pts = np.minimum(pts, np.nextafter(b[:, 1], b[:, 0]))
    return PointSet(pts, b, seed, names)


def grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise BadStep(f"step must be positive, got {step}")
    count = (hi - lo) / step
    n = int(round(count))
    if n < 1 or abs(count - n) > 1e-9 * max(1.0, abs(count)):
        raise BadStep(f"step {step} does not divide [{lo}, {hi}]")
    return lo + step * np.arange(n + 1)


def uniform_grid(box, steps, names=None) -> PointSet:
    """Tensor grid including both endpoints; the last coordinate varies fastest."""
    b = _as_box(box)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), (b.shape[0],))
    axes = [grid_axis(lo, hi, s) for (lo, hi), s in zip(b, steps)]
    for ax, (lo, hi) in zip(axes, b):
        ax[-1] = hi  # exact endpoint
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return PointSet(pts, b, None, names)


def split_boundary_initial(n_total: int, pools, seed: int = 0):
    """Draw ``n_total`` points without replacement from the union of pools.

    ``pools`` is a sequence of arrays (e.g. initial line, left boundary,
    right boundary).  Returns the per-pool selections and their counts;
    counts follow from the draw, only their sum is fixed.
    """
    sizes = [len(p) for p in pools]
    total = sum(sizes)
    if n_total > total:
        raise PoolTooSmall(f"asked for {n_total} points from pools totalling {total}")
    rng = make_rng(seed)
    chosen = np.sort(rng.choice(total, size=n_total, replace=False))
    offsets = np.cumsum([0] + sizes)
    picks = []
    for k, pool in enumerate(pools):
        idx = chosen[(chosen >= offsets[k]) & (chosen < offsets[k + 1])] - offsets[k]
        picks.append(np.asarray(pool)[idx])
    return picks, [len(p) for p in picks]
