"""Step-2 geometric rough paths on uniform time grids.

A rough path is stored as per-interval increments: ``level1[k]`` is the
increment of the path over ``[t_k, t_{k+1}]`` and ``level2[k]`` the matrix of
iterated integrals ``int_{t_k<r<s<t_{k+1}} dx^i_r dx^j_s`` over the same
interval. Paths lifted from fine samples also carry an independently
accumulated level-2 signature anchored at ``t0`` which the Chen check
compares against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_P = 2.5
DEFAULT_SUBSTEPS = 16


class RoughPathError(ValueError):
    """Raised for malformed rough path input."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise RoughPathError(f"need t0 < t1, got [{self.t0}, {self.t1}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise RoughPathError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.h

    def index_of(self, t: float) -> int:
        """Index of the grid node at time ``t``; raises if ``t`` is off-grid."""
        k = round((t - self.t0) / self.h)
        if not 0 <= k <= self.n_steps or abs(self.t0 + k * self.h - t) > 1e-9 * max(1.0, abs(t)):
            raise RoughPathError(f"time {t} is not a node of {self}")
        return int(k)

    def refine(self, factor: int) -> TimeGrid:
        return TimeGrid(self.t0, self.t1, self.n_steps * factor)

    def compatible(self, other: TimeGrid) -> bool:
        return (
            self.n_steps == other.n_steps
            and math.isclose(self.t0, other.t0, abs_tol=1e-12)
            and math.isclose(self.t1, other.t1, abs_tol=1e-12)
        )


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _geometric_part(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Replace the symmetric part of ``x2`` by ``x1 (x) x1 / 2``."""
    sym = 0.5 * np.einsum("...i,...j->...ij", x1, x1)
    return sym + 0.5 * (x2 - np.swapaxes(x2, -1, -2))


@dataclass(frozen=True)
class GeometricRoughPath:
    """Level-1/level-2 increments of a driving signal over a uniform grid.

    ``samples`` (fine path values) and ``anchored`` (level-2 signature from
    ``t0`` at every grid node) are optional; lifts built from samples carry
    both.
    """

    grid: TimeGrid
    level1: np.ndarray
    level2: np.ndarray
    p: float = DEFAULT_P
    samples: np.ndarray | None = field(default=None, repr=False)
    anchored: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        l1 = np.asarray(self.level1, dtype=float)
        if l1.ndim == 1:
            l1 = l1[:, None]
        l2 = np.asarray(self.level2, dtype=float)
        if l2.ndim == 1:
            l2 = l2[:, None, None]
        n, d = l1.shape
        if n != self.grid.n_steps:
            raise RoughPathError(f"level1 has {n} intervals, grid has {self.grid.n_steps}")
        if l2.shape != (n, d, d):
            raise RoughPathError(f"level2 shape {l2.shape} != {(n, d, d)}")
        if not 2.0 < self.p < 3.0:
            raise RoughPathError(f"p must lie in (2, 3), got {self.p}")
        if self.anchored is not None and np.shape(self.anchored) != (n + 1, d, d):
            raise RoughPathError("anchored signature has the wrong shape")
        object.__setattr__(self, "level1", _frozen(l1))
        object.__setattr__(self, "level2", _frozen(l2))
        object.__setattr__(self, "samples", _frozen(self.samples))
        object.__setattr__(self, "anchored", _frozen(self.anchored))

    @property
    def dim(self) -> int:
        return self.level1.shape[1]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def values(self) -> np.ndarray:
        """Path values at the grid nodes, relative to the value at ``t0``."""
        out = np.zeros((self.n_steps + 1, self.dim))
        np.cumsum(self.level1, axis=0, out=out[1:])
        return out

    def chen_signature(self) -> np.ndarray:
        """Level-2 signature from ``t0`` to every node, accumulated by Chen's rule."""
        x = self.values()
        out = np.zeros((self.n_steps + 1, self.dim, self.dim))
        cross = np.einsum("ki,kj->kij", x[:-1], self.level1)
        np.cumsum(self.level2 + cross, axis=0, out=out[1:])
        return out

    def reference_signature(self) -> np.ndarray:
        return self.anchored if self.anchored is not None else self.chen_signature()

    def increment(self, k0: int, k1: int) -> tuple[np.ndarray, np.ndarray]:
        """(level1, level2) over ``[t_{k0}, t_{k1}]`` by Chen composition."""
        x1 = np.zeros(self.dim)
        x2 = np.zeros((self.dim, self.dim))
        for k in range(k0, k1):
            x2 = x2 + self.level2[k] + np.outer(x1, self.level1[k])
            x1 = x1 + self.level1[k]
        return x1, x2

    def component(self, idx) -> GeometricRoughPath:
        """Sub-path made of the components ``idx`` (a sequence of indices)."""
        idx = np.asarray(idx, dtype=int)
        ix = np.ix_(np.arange(self.n_steps), idx, idx)
        anch = None
        if self.anchored is not None:
            anch = self.anchored[np.ix_(np.arange(self.n_steps + 1), idx, idx)]
        samples = None if self.samples is None else self.samples[:, idx]
        return GeometricRoughPath(
            self.grid, self.level1[:, idx], self.level2[ix], self.p, samples, anch
        )

    def reversed(self) -> GeometricRoughPath:
        """Time reversal ``r -> t0 + t1 - r``: intervals reversed, each replaced by its group inverse."""
        x1 = -self.level1[::-1]
        x2 = np.einsum("ki,kj->kij", self.level1, self.level1) - self.level2
        samples = None if self.samples is None else self.samples[::-1]
        return GeometricRoughPath(self.grid, x1, x2[::-1], self.p, samples)


def reversed_increment(x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return -x1, np.einsum("...i,...j->...ij", x1, x1) - x2


def _fine_level2(delta: np.ndarray, r: int, strat: np.ndarray | None = None):
    """Per-interval and anchored level-2 sums of a piecewise-linear fine path.

    ``delta`` holds fine increments (n*r, d). Entry (i, j) uses the
    Stratonovich (trapezoid) rule when ``strat[i, j]`` is true and the left
    point rule otherwise.
    """
    nf, d = delta.shape
    n = nf // r
    if strat is None:
        strat = np.ones((d, d), dtype=bool)
    half = 0.5 * np.einsum("ki,kj->kij", delta, delta) * strat

    blocks = delta.reshape(n, r, d)
    local = np.cumsum(blocks, axis=1) - blocks  # exclusive in-interval sums
    x2 = np.einsum("nri,nrj->nij", local, blocks) + half.reshape(n, r, d, d).sum(axis=1)

    glob = np.cumsum(delta, axis=0) - delta
    terms = np.einsum("ki,kj->kij", glob, delta) + half
    csum = np.cumsum(terms, axis=0)
    anchored = np.zeros((n + 1, d, d))
    anchored[1:] = csum[r - 1 :: r]
    return x2, anchored


def _check_samples(samples, grid: TimeGrid) -> tuple[np.ndarray, int]:
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise RoughPathError("samples must be a 1-D or 2-D array")
    nf = s.shape[0] - 1
    if nf % grid.n_steps or nf // grid.n_steps < 4:
        raise RoughPathError(
            f"{nf} fine steps is not an integer multiple (>= 4) of {grid.n_steps} grid steps"
        )
    if not np.all(np.isfinite(s)):
        raise RoughPathError("samples contain non-finite values")
    return s, nf // grid.n_steps


def lift_smooth_path(samples, p: float, grid: TimeGrid) -> GeometricRoughPath:
    """Canonical level-2 lift of the piecewise-linear interpolant of ``samples``.

    ``samples`` are path values at the nodes of ``grid`` refined by an integer
    factor r >= 4. Level-1 entries are exact endpoint differences; the
    symmetric part of level 2 is set to ``x1 (x) x1 / 2`` so the result is
    geometric up to rounding.
    """
    s, r = _check_samples(samples, grid)
    delta = np.diff(s, axis=0)
    x2, anchored = _fine_level2(delta, r)
    x1 = s[r::r] - s[:-1:r]
    x2 = _geometric_part(x1, x2)
    anchored = _geometric_part(s[::r] - s[0], anchored)
    return GeometricRoughPath(grid, x1, x2, p, samples=s, anchored=anchored)


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def brownian_samples(dim: int, grid: TimeGrid, substeps: int, seed) -> np.ndarray:
    """Brownian motion started at 0 on ``grid`` refined ``substeps`` times."""
    rng = np.random.Generator(np.random.PCG64(_as_seed_sequence(seed)))
    nf = grid.n_steps * substeps
    dw = rng.standard_normal((nf, dim)) * math.sqrt(grid.h / substeps)
    w = np.zeros((nf + 1, dim))
    np.cumsum(dw, axis=0, out=w[1:])
    return w


def sample_brownian_lift(
    dim: int, grid: TimeGrid, substeps: int = DEFAULT_SUBSTEPS, seed=0, p: float = DEFAULT_P
) -> GeometricRoughPath:
    """Stratonovich lift of a sampled Brownian path (piecewise-linear at sub-resolution)."""
    if dim < 1:
        raise RoughPathError("dim must be >= 1")
    if substeps < 4:
        raise RoughPathError("substeps must be >= 4")
    return lift_smooth_path(brownian_samples(dim, grid, substeps, seed), p, grid)


def time_lift(grid: TimeGrid, substeps: int = 4, p: float = DEFAULT_P) -> GeometricRoughPath:
    """Lift of the scalar driver z(t) = t - t0."""
    fine = grid.refine(substeps).nodes - grid.t0
    return lift_smooth_path(fine, p, grid)


def _fine_values(rp: GeometricRoughPath, r: int) -> np.ndarray:
    """Values of ``rp`` on the grid refined by ``r`` (piecewise-linear in between)."""
    if rp.samples is not None:
        src = rp.samples
        rs = (src.shape[0] - 1) // rp.n_steps
        if rs % r == 0:
            return src[:: rs // r]
    else:
        src, rs = rp.values(), 1
    t = np.arange(src.shape[0]) / rs
    tf = np.arange(rp.n_steps * r + 1) / r
    return np.stack([np.interp(tf, t, src[:, i]) for i in range(rp.dim)], axis=1)


def joint_lift(z_lift: GeometricRoughPath, w_samples, grid: TimeGrid) -> GeometricRoughPath:
    """Canonical joint lift of a rough driver ``z`` and a Brownian path ``W``.

    Blocks of the level-2 matrix, with components ordered (z, W):

    * (z, z): copied from ``z_lift``;
    * (W, W): Stratonovich lift of the piecewise-linear ``W``;
    * (z, W): left-point sums of ``int (z - z_s) dW`` on the fine grid;
    * (W, z): ``dW (x) dz - (z, W)^T`` so that the mixed blocks are geometric.
    """
    if not z_lift.grid.compatible(grid):
        raise RoughPathError("z_lift and W live on different grids")
    w, r = _check_samples(w_samples, grid)
    m, k = z_lift.dim, w.shape[1]
    zf = _fine_values(z_lift, r)
    fine = np.concatenate([zf - zf[0], w - w[0]], axis=1)
    delta = np.diff(fine, axis=0)

    strat = np.zeros((m + k, m + k), dtype=bool)
    strat[:m, :m] = True
    strat[m:, m:] = True
    x2, anchored = _fine_level2(delta, r, strat)

    x1 = np.concatenate([z_lift.level1, w[r::r] - w[:-1:r]], axis=1)
    xn = fine[::r]
    for arr, ones in ((x2, x1), (anchored, xn)):
        zw = arr[:, :m, m:]
        arr[:, m:, :m] = np.einsum("ni,nj->nij", ones[:, m:], ones[:, :m]) - np.swapaxes(zw, 1, 2)
        arr[:, m:, m:] = _geometric_part(ones[:, m:], arr[:, m:, m:])
    x2[:, :m, :m] = z_lift.level2
    anchored[:, :m, :m] = z_lift.reference_signature()
    return GeometricRoughPath(grid, x1, x2, z_lift.p, samples=fine, anchored=anchored)


@dataclass(frozen=True)
class RoughPathDefect:
    chen_defect: float
    shuffle_defect: float
    holder_norm: float

    def tolerance(self) -> float:
        return 1e-8 * (1.0 + self.holder_norm**2)

    def ok(self) -> bool:
        tol = self.tolerance()
        return self.chen_defect <= tol and self.shuffle_defect <= tol


def holder_norm(rp: GeometricRoughPath) -> float:
    """1/p-Hoelder norm over all pairs of grid nodes, homogeneous norm max(|x1|, |x2|^(1/2))."""
    x = rp.values()
    sig = rp.reference_signature()
    tn = rp.grid.nodes
    best = 0.0
    for s in range(rp.n_steps):
        x1 = x[s + 1 :] - x[s]
        x2 = sig[s + 1 :] - sig[s] - np.einsum("i,kj->kij", x[s], x1)
        norm = np.maximum(
            np.linalg.norm(x1, axis=1), np.sqrt(np.linalg.norm(x2, axis=(1, 2)))
        )
        ratio = norm / (tn[s + 1 :] - tn[s]) ** (1.0 / rp.p)
        best = max(best, float(ratio.max()))
    return best


def check_defects(rp: GeometricRoughPath) -> RoughPathDefect:
    """Chen, shuffle and Hoelder diagnostics of ``rp``.

    Chen is checked on every triple (t0, t_k, t_{k+1}) against the anchored
    signature (which, for lifts of samples, was accumulated independently
    of the per-interval increments).
    """
    x = rp.values()
    sig = rp.reference_signature()
    chen2 = sig[1:] - sig[:-1] - np.einsum("ki,kj->kij", x[:-1], rp.level1) - rp.level2
    chen = float(np.abs(chen2).max())
    if rp.samples is not None:
        s = rp.samples
        r = (s.shape[0] - 1) // rp.n_steps
        chen = max(chen, float(np.abs((s[r::r] - s[:-1:r]) - rp.level1).max()))
    sym = 0.5 * (rp.level2 + np.swapaxes(rp.level2, 1, 2))
    shuffle = float(np.abs(sym - 0.5 * np.einsum("ki,kj->kij", rp.level1, rp.level1)).max())
    return RoughPathDefect(chen, shuffle, holder_norm(rp))
