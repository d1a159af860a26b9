"""Classical entropy-solution oracles for smooth drivers.

Exact Riemann solutions for convex fluxes, a first-order Godunov scheme on
the periodic torus, and the time-change reduction for x-independent fluxes
driven by a smooth increasing path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class CFLError(ValueError):
    pass


class ReferenceError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexFlux:
    f: Callable
    df: Callable
    df_inv: Callable  # inverse of f' (rarefaction fans)
    sonic: float  # minimiser of f


BURGERS = ConvexFlux(
    f=lambda u: 0.5 * np.asarray(u, float) ** 2,
    df=lambda u: np.asarray(u, float),
    df_inv=lambda s: np.asarray(s, float),
    sonic=0.0,
)


@dataclass(frozen=True)
class RiemannProblem:
    u_left: float
    u_right: float
    flux: ConvexFlux = BURGERS

    def __post_init__(self):
        lo, hi = sorted((self.u_left, self.u_right))
        if hi > lo:
            s = np.linspace(lo, hi, 33)
            second = np.diff(self.flux.f(s), 2)
            if np.any(second < -1e-12 * max(1.0, np.abs(self.flux.f(s)).max())):
                raise ReferenceError("flux is not convex between the Riemann states")

    def wave_speeds(self) -> tuple[float, float]:
        """(leftmost, rightmost) signal speeds."""
        uL, uR, fl = self.u_left, self.u_right, self.flux
        if uL > uR:
            s = float((fl.f(uL) - fl.f(uR)) / (uL - uR))
            return s, s
        return float(fl.df(uL)), float(fl.df(uR))

    def solve(self, x, t):
        """Entropy solution at ``x`` (relative to the initial jump) and time ``t > 0``."""
        if t <= 0:
            raise ReferenceError("t must be positive")
        x = np.asarray(x, float)
        uL, uR = self.u_left, self.u_right
        if uL == uR:
            return np.full_like(x, uL)
        lo, hi = self.wave_speeds()
        xi = x / t
        if uL > uR:
            return np.where(xi < lo, uL, uR)
        fan = np.clip(self.flux.df_inv(xi), uL, uR)
        return np.where(xi <= lo, uL, np.where(xi >= hi, uR, fan))


def exact_riemann_burgers(u_left, u_right, x, t):
    return RiemannProblem(float(u_left), float(u_right)).solve(x, t)


def periodic_riemann_solution(u_left, u_right, x, t, torus=1.0, split=0.5, flux=BURGERS):
    """Entropy solution for data u_left on [0, split), u_right on [split, torus).

    The two jumps (at 0 and at ``split``) are solved independently; raises
    ``ReferenceError`` once their waves would interact.
    """
    x = np.mod(np.asarray(x, float), torus)
    if t == 0:
        return np.where(x < split, float(u_left), float(u_right))
    a = RiemannProblem(u_right, u_left, flux)  # jump at 0 (wrapped)
    b = RiemannProblem(u_left, u_right, flux)  # jump at split
    a_lo, a_hi = (s * t for s in a.wave_speeds())
    b_lo, b_hi = (s * t for s in b.wave_speeds())
    if not (a_hi < split + b_lo and split + b_hi < torus + a_lo):
        raise ReferenceError(f"waves interact before t={t}")
    m1 = 0.5 * (a_hi + split + b_lo)
    m2 = 0.5 * (split + b_hi + torus + a_lo)
    xr = np.where(x >= m2, x - torus, x)
    return np.where((xr >= m2 - torus) & (xr < m1), a.solve(xr, t), b.solve(x - split, t))


def godunov_flux(uL, uR, flux: ConvexFlux = BURGERS):
    """Exact Riemann flux at an interface for a convex flux."""
    uL, uR = np.asarray(uL, float), np.asarray(uR, float)
    s = flux.sonic
    return np.maximum(flux.f(np.maximum(uL, s)), flux.f(np.minimum(uR, s)))


def godunov_step(u, flux: ConvexFlux, dt: float, dx: float):
    """One conservative step on the periodic grid ``u``."""
    u = np.asarray(u, float)
    speed = float(np.abs(flux.df(u)).max(initial=0.0))
    if dt * speed > dx * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt*max|f'| = {dt * speed:.4g} > dx = {dx:.4g}")
    Fr = godunov_flux(u, np.roll(u, -1), flux)  # flux at i + 1/2
    return u - dt / dx * (Fr - np.roll(Fr, 1))


def godunov_solve(u0, t: float, dx: float, flux: ConvexFlux = BURGERS, cfl: float = 0.5):
    """March ``godunov_step`` to time ``t`` with the largest uniform step at the given CFL number."""
    u = np.asarray(u0, float).copy()
    if t <= 0:
        return u
    speed = max(float(np.abs(flux.df(u)).max(initial=0.0)), 1e-12)
    n = max(1, int(np.ceil(t * speed / (cfl * dx))))
    dt = t / n
    for _ in range(n):
        u = godunov_step(u, flux, dt, dx)
    return u


def time_change_solve(u0, z, t: float, dx: float, flux: ConvexFlux = BURGERS, t0: float = 0.0,
                      n_check: int = 257, cfl: float = 0.5):
    """Entropy solution driven by a smooth increasing path ``z`` (a callable), at time ``t``.

    For an x-independent flux the solution at ``t`` is the classical one at
    the rescaled time z(t) - z(t0).
    """
    ts = np.linspace(t0, t, n_check)
    zs = np.asarray([z(s) for s in ts], float)
    if np.any(np.diff(zs) <= 0):
        raise ReferenceError("driver is not strictly increasing")
    return godunov_solve(u0, float(zs[-1] - zs[0]), dx, flux, cfl)
