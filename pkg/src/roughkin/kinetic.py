"""BGK kinetic solver on a periodic x-grid times a truncated xi-interval.

F is stored as xi-cell averages on an (n_x, n_xi) grid, optionally with
leading batch axes (several data driven by the same path share the
characteristic flow).  The cell average of 1_{0>xi} is ``grid.H``; since 0 is
a cell edge it is exactly 0/1.

A step is transport followed by exact relaxation:

    F* = F^n o psi_{t_n, t_{n+1}}           (semi-Lagrangian, bilinear)
    u* = density(F*)
    F^{n+1} = E(u*) + e (F* - E(u*)),       e = exp(-dt/eps)

Relaxation leaves the density unchanged, so u* is the fixed point of
v -> density(e F* + (1 - e) E(v)); the loop below checks that explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .characteristics import DEFAULT_MAX_INCREMENT, FlowField, forward_flow, inverse_flow
from .coefficients import CharacteristicFields, FluxModel, assemble_characteristic_fields
from .rough_path import GeometricRoughPath

SLAB_TOL = 1e-12
BOUNDARY_TOL = 1e-6
MAX_FP_ITER = 8
MIN_STAGE_FACTOR = 0.1


class KineticError(RuntimeError):
    """Raised when a kinetic state or step violates its invariants."""


class FixedPointError(KineticError):
    pass


@dataclass(frozen=True)
class KineticGrid:
    n_x: int
    n_xi: int
    torus: float = 1.0
    L: float = 2.0

    def __post_init__(self):
        if self.n_x < 2 or self.n_xi < 2:
            raise KineticError("grid needs at least 2 cells per axis")
        if self.n_xi % 2:
            raise KineticError("n_xi must be even so that xi = 0 is a cell edge")
        if self.torus <= 0 or self.L <= 0:
            raise KineticError("torus and L must be positive")

    @classmethod
    def from_spacing(cls, dx: float, dxi: float, torus: float = 1.0, L: float = 2.0) -> KineticGrid:
        n_x = int(round(torus / dx))
        half = int(np.ceil(L / dxi - 1e-9))
        return cls(n_x, 2 * half, torus, half * dxi)

    @property
    def dx(self) -> float:
        return self.torus / self.n_x

    @property
    def dxi(self) -> float:
        return 2 * self.L / self.n_xi

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) * self.dx

    @property
    def xi_edges(self) -> np.ndarray:
        return -self.L + np.arange(self.n_xi + 1) * self.dxi

    @property
    def xi(self) -> np.ndarray:
        return -self.L + (np.arange(self.n_xi) + 0.5) * self.dxi

    @property
    def H(self) -> np.ndarray:
        """Cell averages of 1_{0 > xi}."""
        return (self.xi < 0).astype(float)

    @property
    def shape(self):
        return (self.n_x, self.n_xi)

    def mesh(self):
        return np.meshgrid(self.x, self.xi, indexing="ij")


@dataclass(frozen=True)
class KineticState:
    t: float
    F: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)

    def check(self, grid: KineticGrid, strict_boundary: bool = True) -> None:
        if not np.all(np.isfinite(self.F)):
            raise KineticError("non-finite kinetic values")
        if self.F.min() < 0.0 or self.F.max() > 1.0:
            raise KineticError(f"maximum principle violated: F in [{self.F.min()}, {self.F.max()}]")
        if strict_boundary:
            lo = self.F[..., 0].min()
            hi = self.F[..., -1].max()
            if lo < 1 - BOUNDARY_TOL or hi > BOUNDARY_TOL:
                raise KineticError(f"xi box too small: boundary cells {lo:.3g}, {hi:.3g}")
        if np.abs(density(grid, self.F) - self.u).max(initial=0.0) > 1e-10:
            raise KineticError("cached density out of date")


@dataclass(frozen=True)
class KineticMeasureSlab:
    t0: float
    t1: float
    values: np.ndarray = field(repr=False)  # time-integrated m^eps at upper xi cell edges
    mass: float | np.ndarray
    min_raw: float


def chi(alpha, xi):
    """1_{0 < xi < alpha} - 1_{alpha < xi < 0}."""
    alpha, xi = np.asarray(alpha, float), np.asarray(xi, float)
    out = ((0 < xi) & (xi < alpha)).astype(float) - ((alpha < xi) & (xi < 0)).astype(float)
    return out if out.ndim else float(out)


def equilibrium_values(grid: KineticGrid, u) -> np.ndarray:
    """Cell averages of 1_{u > xi}; shape ``u.shape + (n_xi,)``."""
    u = np.asarray(u, float)
    if np.any(np.abs(u) > grid.L - grid.dxi + 1e-12):
        raise KineticError(
            f"density {np.abs(u).max():.4g} outside the xi box (L={grid.L}, dxi={grid.dxi})"
        )
    lower = grid.xi_edges[:-1]
    return np.clip((u[..., None] - lower) / grid.dxi, 0.0, 1.0)


def density(grid: KineticGrid, F) -> np.ndarray:
    return np.sum(np.asarray(F) - grid.H, axis=-1) * grid.dxi


def equilibrium(grid: KineticGrid, u, t: float = 0.0) -> KineticState:
    u = np.asarray(u, float)
    F = equilibrium_values(grid, u)
    return KineticState(t, F, density(grid, F))


def make_state(grid: KineticGrid, F, t: float = 0.0) -> KineticState:
    F = np.asarray(F, float)
    return KineticState(t, F, density(grid, F))


def interpolate(grid: KineticGrid, F: np.ndarray, xq: np.ndarray, xiq: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of cell-centre values, periodic in x, 1/0 extension in xi.

    ``F`` has shape (..., n_x, n_xi); the query arrays have shape (n_x, n_xi)
    (one foot point per node) and the result matches ``F``.
    """
    if np.any(np.abs(xiq) > 2 * grid.L):
        raise KineticError("foot points leave the extended xi box; enlarge L or shorten dt")
    sx = (xq - 0.5 * grid.dx) / grid.dx
    ix = np.floor(sx).astype(int)
    wx = sx - ix
    ix0 = np.mod(ix, grid.n_x)
    ix1 = np.mod(ix + 1, grid.n_x)

    pad = np.concatenate(
        [np.ones(F.shape[:-1] + (1,)), F, np.zeros(F.shape[:-1] + (1,))], axis=-1
    )
    sxi = (xiq - grid.xi[0]) / grid.dxi
    sxi = np.clip(sxi, -1.0, grid.n_xi)
    j = np.floor(sxi).astype(int)
    j = np.minimum(j, grid.n_xi - 1)
    wxi = sxi - j
    j0, j1 = j + 1, j + 2  # indices into the padded array

    f00 = pad[..., ix0, j0]
    f01 = pad[..., ix0, j1]
    f10 = pad[..., ix1, j0]
    f11 = pad[..., ix1, j1]
    out = (1 - wx) * ((1 - wxi) * f00 + wxi * f01) + wx * ((1 - wxi) * f10 + wxi * f11)
    return np.clip(out, 0.0, 1.0)


def transport_flow(
    fields: CharacteristicFields,
    rp: GeometricRoughPath,
    grid: KineticGrid,
    s: float,
    t: float,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> FlowField:
    """psi_{s,t} at the grid nodes."""
    X, XI = grid.mesh()
    return inverse_flow(fields, rp, s, t, X, XI, with_jacobian=False, max_increment=max_increment)


def transport_apply(grid: KineticGrid, state: KineticState, psi: FlowField) -> KineticState:
    """S(t, s) F = F o psi_{s,t}."""
    foot = psi.maps
    if np.array_equal(foot, psi.seeds):
        return KineticState(psi.t, state.F, state.u)
    F = interpolate(grid, state.F, foot[..., 0], foot[..., 1])
    return KineticState(psi.t, F, density(grid, F))


def _relax(grid, Fs, us, factor):
    """E(u*) + factor (F* - E(u*)); factor is split into stages no smaller than MIN_STAGE_FACTOR."""
    E = equilibrium_values(grid, us)
    n_stage = 1
    if factor < MIN_STAGE_FACTOR:
        n_stage = int(np.ceil(np.log(max(factor, 1e-300)) / np.log(MIN_STAGE_FACTOR)))
    stage = factor ** (1.0 / n_stage)
    F = Fs
    for _ in range(n_stage):
        F = E + stage * (F - E)
    return np.clip(F, 0.0, 1.0), E


def _fixed_point(grid, Fs, us, factor, tol_fp):
    """Check that u* solves v = density(e F* + (1 - e) E(v)) and return it.

    The map has u* as an exact fixed point, so the iteration only verifies
    it; returning u* itself keeps every datum independent of its batch.
    """
    v = us
    for _ in range(MAX_FP_ITER):
        v_new = density(grid, factor * Fs + (1.0 - factor) * equilibrium_values(grid, v))
        change = float(np.abs(v_new - v).sum(axis=-1).max(initial=0.0)) * grid.dx
        v = v_new
        if change <= tol_fp:
            return us
    raise FixedPointError(f"relaxation fixed point did not settle (last change {change:.3g})")


def slab_values(grid: KineticGrid, E: np.ndarray, Fs: np.ndarray, factor: float):
    """Time-integrated m^eps over one step at the upper xi edges, plus its raw minimum."""
    raw = np.cumsum(E - Fs, axis=-1) * grid.dxi * (1.0 - factor)
    mn = float(raw.min(initial=0.0))
    if mn < -SLAB_TOL:
        raise KineticError(f"negative kinetic measure {mn:.3g}")
    return np.maximum(raw, 0.0), mn


def bgk_step(
    grid: KineticGrid,
    state: KineticState,
    psi: FlowField,
    eps: float,
    dt: float,
    tol_fp: float = 1e-12,
) -> tuple[KineticState, KineticMeasureSlab]:
    if eps <= 0 or dt <= 0:
        raise KineticError("eps and dt must be positive")
    star = transport_apply(grid, state, psi)
    factor = float(np.exp(-dt / eps))
    u_mid = _fixed_point(grid, star.F, star.u, factor, tol_fp)
    F, E = _relax(grid, star.F, u_mid, factor)
    vals, mn = slab_values(grid, E, star.F, factor)
    mass = vals.sum(axis=(-2, -1)) * grid.dx * grid.dxi
    new = KineticState(state.t + dt, F, density(grid, F))
    return new, KineticMeasureSlab(state.t, state.t + dt, vals, mass, mn)


def kinetic_measure_total(slabs) -> float | np.ndarray:
    total = 0.0
    for s in slabs:
        total = total + s.mass
    return total


@dataclass
class DiagnosticsRecord:
    """One row per solver step; columns t, mass, l1, l2, measure_mass, maxprin_defect, residual."""

    rows: list[dict] = field(default_factory=list)
    columns = ("t", "mass", "l1", "l2", "measure_mass", "maxprin_defect", "residual")

    def append(self, **row):
        self.rows.append({c: row.get(c, np.nan) for c in self.columns})

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)


def maxprin_defect(F) -> float:
    return float(max(0.0, -F.min(), F.max() - 1.0))


def _row(grid, st, measure_mass, residual=np.nan):
    u = st.u
    return dict(
        t=st.t,
        mass=u.sum(axis=-1) * grid.dx,
        l1=np.abs(u).sum(axis=-1) * grid.dx,
        l2=np.sqrt((u**2).sum(axis=-1) * grid.dx),
        measure_mass=measure_mass,
        maxprin_defect=maxprin_defect(st.F),
        residual=residual,
    )


@dataclass
class Solution:
    grid: KineticGrid
    states: list[KineticState]
    slabs: list[KineticMeasureSlab]
    diagnostics: DiagnosticsRecord
    step_times: np.ndarray
    relax: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def final(self) -> KineticState:
        return self.states[-1]

    @property
    def measure_total(self):
        return kinetic_measure_total(self.slabs)


def duhamel_solve(
    F0,
    model: FluxModel,
    rp: GeometricRoughPath,
    eps: float,
    grid: KineticGrid,
    t_end: float,
    dt: float,
    keep: str = "all",
    tol_fp: float = 1e-12,
    max_increment: float = DEFAULT_MAX_INCREMENT,
    strict_boundary: bool = True,
    snapshot_every: int = 1,
) -> Solution:
    """March ``bgk_step`` from ``rp.grid.t0`` to ``t_end``.

    ``F0`` is a KineticState or an array of shape (..., n_x, n_xi); leading
    axes are independent data sharing the driver.  ``rp`` carries the
    z components followed by the W components (see ``joint_lift``); ``dt``
    must be a multiple of its grid step.  ``keep`` is ``"all"`` (every
    ``snapshot_every``-th state), ``"last"`` or ``"all+relax"`` (also keeps
    the relaxation increments needed by the weak residual).
    """
    forced, _ = assemble_characteristic_fields(model)
    if rp.dim != forced.n_columns:
        raise KineticError(
            f"driver has {rp.dim} components, model {model.name} needs {forced.n_columns}"
        )
    ratio = dt / rp.grid.h
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise KineticError(f"dt={dt} is not a multiple of the driver step {rp.grid.h}")
    n_steps = int(round((t_end - rp.grid.t0) / dt))
    if abs(rp.grid.t0 + n_steps * dt - t_end) > 1e-9 or t_end > rp.grid.t1 + 1e-12:
        raise KineticError(f"t_end={t_end} is not reachable with dt={dt} on {rp.grid}")

    t0 = rp.grid.t0
    state = F0 if isinstance(F0, KineticState) else make_state(grid, F0, t0)
    state.check(grid, strict_boundary)
    diag = DiagnosticsRecord()
    diag.append(**_row(grid, state, 0.0 * state.u.sum(axis=-1)))
    states, slabs, relax = [state], [], []
    times = t0 + dt * np.arange(n_steps + 1)
    cum = 0.0
    for n in range(n_steps):
        s, t = times[n], times[n + 1]
        psi = transport_flow(forced, rp, grid, s, t, max_increment)
        new, slab = bgk_step(grid, state, psi, eps, dt, tol_fp)
        new = KineticState(t, new.F, new.u)
        new.check(grid, strict_boundary)
        if keep == "all+relax":
            star = transport_apply(grid, state, psi)
            relax.append(new.F - star.F)
        state = new
        slabs.append(slab)
        cum = cum + slab.mass
        diag.append(**_row(grid, state, cum))
        if keep != "last" and ((n + 1) % snapshot_every == 0 or n + 1 == n_steps):
            states.append(state)
    if keep == "last":
        states = [states[0], state]
    return Solution(grid, states, slabs, diag, times, relax)


# --- weak formulation -------------------------------------------------------


@dataclass(frozen=True)
class BumpTest:
    """Smooth compactly supported test function prod (1 - r^2)^4 in scaled coordinates."""

    x0: float
    xi0: float
    rx: float
    rxi: float

    def __call__(self, x, xi):
        return self.value_and_grad(x, xi)[0]

    def value_and_grad(self, x, xi):
        sx = (np.asarray(x) - self.x0) / self.rx
        sxi = (np.asarray(xi) - self.xi0) / self.rxi
        inside = (np.abs(sx) < 1) & (np.abs(sxi) < 1)
        px = np.where(inside, (1 - sx**2) ** 4, 0.0)
        pxi = np.where(inside, (1 - sxi**2) ** 4, 0.0)
        dpx = np.where(inside, -8 * sx * (1 - sx**2) ** 3 / self.rx, 0.0)
        dpxi = np.where(inside, -8 * sxi * (1 - sxi**2) ** 3 / self.rxi, 0.0)
        return px * pxi, dpx * pxi, px * dpxi


def smooth_time_cutoff(T: float, start: float = 0.7):
    """alpha(t) = 1 on [0, start T], smooth decay to 0 at T."""

    def alpha(t):
        t = np.asarray(t, float)
        s = np.clip((t / T - start) / (1 - start), 0.0, 1.0)
        return np.where(s <= 0, 1.0, np.where(s >= 1, 0.0, (1 - s**2) ** 3))

    return alpha


def _unforced_driver(rp: GeometricRoughPath, M: int) -> GeometricRoughPath:
    return rp if rp.dim == M else rp.component(range(M))


def test_function_flows(
    model: FluxModel,
    rp: GeometricRoughPath,
    grid: KineticGrid,
    phi: BumpTest,
    times,
    max_increment: float = DEFAULT_MAX_INCREMENT,
):
    """phi(theta_{0,t}) and its xi-derivative at the grid nodes for each time.

    Only nodes inside the image of the support of phi under pi_{0,t}
    (bounding box plus two cells) are integrated; elsewhere the values are 0.
    Returns arrays of shape (len(times), n_x, n_xi).
    """
    _, unforced = assemble_characteristic_fields(model)
    z = _unforced_driver(rp, model.M)
    X, XI = grid.mesh()
    # boundary of the support box, finely sampled
    m = 64
    bx = phi.x0 + phi.rx * np.concatenate([np.linspace(-1, 1, m), np.ones(m), np.linspace(-1, 1, m), -np.ones(m)])
    bxi = phi.xi0 + phi.rxi * np.concatenate([-np.ones(m), np.linspace(-1, 1, m), np.ones(m), np.linspace(-1, 1, m)])
    vals = np.zeros((len(times),) + grid.shape)
    dvals = np.zeros_like(vals)
    t0 = z.grid.t0
    for n, t in enumerate(times):
        if t == t0:
            img_x, img_xi = bx, bxi
        else:
            img = forward_flow(unforced, z, t0, t, bx, bxi, False, max_increment).maps
            img_x, img_xi = img[:, 0], img[:, 1]
        xlo, xhi = img_x.min() - 2 * grid.dx, img_x.max() + 2 * grid.dx
        xilo, xihi = img_xi.min() - 2 * grid.dxi, img_xi.max() + 2 * grid.dxi
        if xhi - xlo >= grid.torus:
            xmask = np.ones(grid.n_x, bool)
        else:
            xmask = np.mod(grid.x - xlo, grid.torus) <= (xhi - xlo)
        ximask = (grid.xi >= xilo) & (grid.xi <= xihi)
        sel = xmask[:, None] & ximask[None, :]
        if not sel.any():
            continue
        # nodes are evaluated at the lifted x closest to the support image
        xs = xlo + np.mod(X[sel] - xlo, grid.torus)
        if t == t0:
            v, gx, gxi = phi.value_and_grad(xs, XI[sel])
            vals[n][sel], dvals[n][sel] = v, gxi
            continue
        th = inverse_flow(unforced, z, t0, t, xs, XI[sel], True, max_increment)
        v, gx, gxi = phi.value_and_grad(th.maps[:, 0], th.maps[:, 1])
        vals[n][sel] = v
        dvals[n][sel] = gx * th.dxi[:, 0] + gxi * th.dxi[:, 1]
    return vals, dvals


def _pair(grid, A, B):
    return np.sum(A * B, axis=(-2, -1)) * grid.dx * grid.dxi


def weak_form_residual(
    sol: Solution,
    model: FluxModel,
    rp: GeometricRoughPath,
    phi: BumpTest,
    alpha=None,
    form: str = "bgk",
    max_increment: float = DEFAULT_MAX_INCREMENT,
    flows=None,
):
    """Discrete weak-formulation residual of a solution.

    Returns ``(total, per_step)`` where ``total`` uses the time test function
    ``alpha`` (default: smooth cutoff vanishing at the final time) and
    ``per_step[n]`` is the strong-form residual with alpha = 1 on [0, t_n].
    ``form="bgk"`` pairs the relaxation increments with phi(theta);
    ``form="kinetic"`` uses the measure slabs against d_xi phi(theta).
    The solution must have been computed with ``keep="all+relax"``.
    """
    grid = sol.grid
    times = sol.step_times
    N = len(times) - 1
    if len(sol.states) != N + 1 or (form == "bgk" and len(sol.relax) != N):
        raise KineticError("weak residual needs every state (keep='all+relax')")
    if alpha is None:
        alpha = smooth_time_cutoff(times[-1] - times[0])
    if flows is None:
        flows = test_function_flows(model, rp, grid, phi, times, max_increment)
    Phi, dPhi = flows
    a = np.asarray(alpha(times - times[0]), float) * np.ones(N + 1)

    P = np.stack([_pair(grid, st.F, Phi[n]) for n, st in enumerate(sol.states)], axis=0)
    src = np.zeros_like(P[1:])
    X, XI = grid.mesh()
    K = model.K
    h = rp.grid.h
    per = int(round((times[1] - times[0]) / h)) if N else 1
    for n in range(N):
        if form == "bgk":
            src[n] = _pair(grid, sol.relax[n], Phi[n + 1])
        else:
            # -<m, d_xi Phi>, slab values live on upper cell edges
            edge_d = np.concatenate([0.5 * (dPhi[n + 1][:, 1:] + dPhi[n + 1][:, :-1]), dPhi[n + 1][:, -1:]], axis=1)
            src[n] = -_pair(grid, sol.slabs[n].values, edge_d)
        if K:
            fj = model.forcing(X, XI)
            k0 = rp.grid.index_of(times[n])
            dW = rp.level1[k0:k0 + per, model.M:].sum(axis=0)
            F = sol.states[n].F
            for k in range(K):
                gk = fj.g[..., k]
                d_gphi = fj.gxi[..., k] * Phi[n] + gk * dPhi[n]
                src[n] = src[n] + _pair(grid, F, d_gphi) * dW[k]
            G2 = np.sum(fj.g**2, axis=-1)
            flux = np.gradient(G2 * dPhi[n], grid.dxi, axis=-1)
            src[n] = src[n] + 0.5 * _pair(grid, F, flux) * (times[n + 1] - times[n])

    total = a[0] * P[0] + np.sum(P[1:] * np.diff(a)[(...,) + (None,) * (P.ndim - 1)], axis=0) \
        + np.sum(a[:-1][(...,) + (None,) * (P.ndim - 1)] * src, axis=0)
    per_step = np.concatenate([np.zeros_like(P[:1]), P[1:] - P[0] - np.cumsum(src, axis=0)], axis=0)
    return total, per_step
