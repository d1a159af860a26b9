"""Characteristic flows of the rough kinetic system.

Trajectories are advanced with a second-order Davie scheme

    y <- y + V_i(y) x1_i + x2_ij (DV_j V_i)(y) + drift(y) dt

using the analytic Jacobians carried by a ``CharacteristicFields`` bundle.
Each rough interval is split per node into 2^k equal geodesic pieces so
that ``|V(y)| * ||piece||`` stays below ``max_increment`` and
``|DV(y)| * ||piece||`` below ``max_distortion``.  The first
variation is propagated with the differentiated step, which gives the
Jacobian determinant without finite differences across the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CharacteristicFields
from .rough_path import GeometricRoughPath, reversed_increment

MAX_DEPTH = 12
STEP_LIMIT = 0.5
DEFAULT_MAX_INCREMENT = 0.05
DEFAULT_MAX_DISTORTION = 0.25


class StepSizeError(RuntimeError):
    """A Davie step was asked to cover a rough increment that is too large."""


@dataclass
class RdeState:
    y: np.ndarray  # (P, 2), columns (x, xi)
    J: np.ndarray | None = None  # (P, 2, 2) first variation

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.J is not None:
            self.J = np.asarray(self.J, dtype=float).reshape(self.y.shape[0], 2, 2)
        if not np.all(np.isfinite(self.y)):
            raise ValueError("non-finite RDE state")

    @classmethod
    def at(cls, x, xi, with_jacobian: bool = False) -> RdeState:
        y = np.stack([np.ravel(x), np.ravel(xi)], axis=1).astype(float)
        J = np.broadcast_to(np.eye(2), (y.shape[0], 2, 2)).copy() if with_jacobian else None
        return cls(y, J)


def _norm(x1, x2):
    """Homogeneous increment norm, batched over leading axes."""
    n1 = np.sqrt(np.sum(x1**2, axis=-1))
    n2 = np.sqrt(np.sqrt(np.sum(x2**2, axis=(-2, -1))))
    return np.maximum(n1, n2)


def rde_step(state: RdeState, fields: CharacteristicFields, x1, x2, dt=0.0) -> RdeState:
    """One Davie step.  ``x1`` is (D,) or (P, D); ``x2`` is (D, D) or (P, D, D); ``dt`` scalar or (P,)."""
    y = state.y
    P = y.shape[0]
    dt = np.broadcast_to(np.asarray(dt, float), (P,))[:, None]
    x1 = np.broadcast_to(np.asarray(x1, float), (P, fields.n_columns))
    x2 = np.broadcast_to(np.asarray(x2, float), (P, fields.n_columns, fields.n_columns))
    order = 2 if state.J is not None else 1
    ev = fields.evaluate(y[:, 0], y[:, 1], order=order)

    vnorm = np.sqrt(np.sum(ev.V**2, axis=(1, 2)))
    size = vnorm * np.sqrt(np.sum(x1**2, axis=1))
    if np.any(size > STEP_LIMIT):
        raise StepSizeError(f"step size {size.max():.3g} exceeds {STEP_LIMIT}; subdivide")

    # sum_ij x2_ij (DV_j V_i) = sum_j DV_j W_j with W_j = sum_i x2_ij V_i
    x2T = np.swapaxes(x2, 1, 2)
    W = x2T @ ev.V
    y_new = (
        y
        + (x1[:, None, :] @ ev.V)[:, 0, :]
        + (ev.DV @ W[..., None]).sum(axis=1)[..., 0]
        + ev.drift * dt
    )

    J_new = None
    if state.J is not None:
        # d/dy_b of DV_j[a, c] V_i[c] = D2V_j[a, c, b] V_i[c] + DV_j[a, c] DV_i[c, b]
        D = x1.shape[1]
        U = (x2T @ ev.DV.reshape(P, D, 4)).reshape(P, D, 2, 2)
        hess = np.swapaxes(ev.D2V, 3, 4) @ W[:, :, None, :, None]
        step = (
            np.eye(2)[None]
            + (x1[:, None, :] @ ev.DV.reshape(P, D, 4)).reshape(P, 2, 2)
            + ev.Ddrift * dt[:, :, None]
            + hess[..., 0].sum(axis=1)
            + (ev.DV @ U).sum(axis=1)
        )
        J_new = step @ state.J
    if not np.all(np.isfinite(y_new)):
        raise StepSizeError("non-finite state after step")
    return RdeState(y_new, J_new)


def geodesic_piece(x1, x2, n: int):
    """Increment of one of ``n`` equal pieces of the geodesic with signature (x1, x2)."""
    sym = 0.5 * np.einsum("...i,...j->...ij", x1, x1)
    anti = x2 - sym
    return x1 / n, sym / n**2 + anti / n


def _depths(fields, y, x1, x2, max_increment, max_distortion):
    ev = fields.evaluate(y[:, 0], y[:, 1], order=1)
    # both the displacement |V| x and the relative distortion |DV| x must be small
    vnorm = np.sqrt(np.sum(ev.V**2, axis=(1, 2)))
    dvnorm = np.sqrt(np.sum(ev.DV**2, axis=(1, 2, 3)))
    vnorm = np.maximum(vnorm, dvnorm * (max_increment / max_distortion))
    depth = np.full(y.shape[0], -1)
    for d in range(MAX_DEPTH + 1):
        p1, p2 = geodesic_piece(x1, x2, 2**d)
        ok = (depth < 0) & (vnorm * _norm(p1, p2) <= max_increment)
        depth[ok] = d
        if np.all(depth >= 0):
            break
    if np.any(depth < 0):
        raise StepSizeError(
            f"rough increment needs more than {MAX_DEPTH} dyadic subdivisions"
        )
    return depth


def integrate(
    fields: CharacteristicFields,
    state: RdeState,
    x1s,
    x2s,
    dts,
    max_increment: float = DEFAULT_MAX_INCREMENT,
    max_distortion: float = None,
) -> RdeState:
    """Advance ``state`` across a sequence of rough increments.

    ``x1s`` has shape (n, D) or (n, P, D) (per-node drivers), ``x2s`` the
    matching level-2 shape, ``dts`` shape (n,) or (n, P).  Nodes are advanced
    independently: every node's result depends only on its own data.
    """
    if max_distortion is None:
        max_distortion = DEFAULT_MAX_DISTORTION
    y = state.y.copy()
    J = None if state.J is None else state.J.copy()
    P = y.shape[0]
    D = fields.n_columns
    x1s = np.asarray(x1s, float)
    x2s = np.asarray(x2s, float)
    dts = np.asarray(dts, float)
    for k in range(x1s.shape[0]):
        x1 = np.broadcast_to(x1s[k], (P, D))
        x2 = np.broadcast_to(x2s[k], (P, D, D))
        dt = np.broadcast_to(dts[k], (P,))
        depth = _depths(fields, y, x1, x2, max_increment, max_distortion)
        for d in np.unique(depth):
            idx = np.nonzero(depth == d)[0]
            n = 2**int(d)
            p1, p2 = geodesic_piece(x1[idx], x2[idx], n)
            sub = RdeState(y[idx], None if J is None else J[idx])
            for _ in range(n):
                sub = rde_step(sub, fields, p1, p2, dt[idx] / n)
            y[idx] = sub.y
            if J is not None:
                J[idx] = sub.J
    return RdeState(y, J)


@dataclass(frozen=True)
class FlowField:
    s: float
    t: float
    seeds: np.ndarray  # (..., 2) starting points
    maps: np.ndarray  # (..., 2) images
    dxi: np.ndarray | None  # (..., 2) derivative of the map in xi
    jac: np.ndarray | None  # (...) Jacobian determinant
    J: np.ndarray | None = None  # (..., 2, 2) full first variation

    @property
    def shape(self):
        return self.maps.shape[:-1]

    def jacobian_defect(self) -> float:
        if self.jac is None:
            raise ValueError("flow was computed without first variation")
        return float(np.abs(self.jac - 1.0).max())


def _driver_slices(fields: CharacteristicFields, rp: GeometricRoughPath, s: float, t: float):
    if rp.dim != fields.n_columns:
        raise ValueError(
            f"rough path has {rp.dim} components but the field bundle expects {fields.n_columns}"
        )
    k0, k1 = rp.grid.index_of(s), rp.grid.index_of(t)
    if k0 > k1:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    return k0, k1


def _seed_state(x, xi, with_jacobian):
    x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
    return x.shape, RdeState.at(x, xi, with_jacobian)


def _package(shape, s, t, x, xi, state):
    seeds = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float)), axis=-1)
    maps = state.y.reshape(shape + (2,))
    if state.J is None:
        return FlowField(s, t, seeds, maps, None, None)
    J = state.J.reshape(shape + (2, 2))
    jac = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return FlowField(s, t, seeds, maps, J[..., :, 1], jac, J)


def forward_flow(
    fields: CharacteristicFields,
    rp: GeometricRoughPath,
    s: float,
    t: float,
    x,
    xi,
    with_jacobian: bool = True,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> FlowField:
    """Flow map from time ``s`` to ``t`` evaluated at the seeds ``(x, xi)``."""
    k0, k1 = _driver_slices(fields, rp, s, t)
    shape, st = _seed_state(x, xi, with_jacobian)
    dts = np.full(k1 - k0, rp.grid.h)
    st = integrate(fields, st, rp.level1[k0:k1], rp.level2[k0:k1], dts, max_increment)
    return _package(shape, s, t, x, xi, st)


def inverse_flow(
    fields: CharacteristicFields,
    rp: GeometricRoughPath,
    s: float,
    t: float,
    x,
    xi,
    with_jacobian: bool = True,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> FlowField:
    """Inverse of ``forward_flow(s, t)``: integrate against the time-reversed driver from t back to s."""
    k0, k1 = _driver_slices(fields, rp, s, t)
    shape, st = _seed_state(x, xi, with_jacobian)
    x1, x2 = reversed_increment(rp.level1[k0:k1][::-1], rp.level2[k0:k1][::-1])
    dts = np.full(k1 - k0, -rp.grid.h)
    st = integrate(fields, st, x1, x2, dts, max_increment)
    return _package(shape, s, t, x, xi, st)


def flow_ensemble(
    fields: CharacteristicFields,
    paths: list[GeometricRoughPath],
    s: float,
    t: float,
    x,
    xi,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> np.ndarray:
    """Forward images of one seed set under many driver realizations; shape (n_paths, ..., 2).

    All paths share a grid; the realizations are stacked along the node axis
    and advanced in one batch.
    """
    k0, k1 = _driver_slices(fields, paths[0], s, t)
    shape, st = _seed_state(x, xi, False)
    P0 = st.y.shape[0]
    n = len(paths)
    x1 = np.stack([p.level1[k0:k1] for p in paths], axis=1)  # (steps, n, D)
    x2 = np.stack([p.level2[k0:k1] for p in paths], axis=1)
    x1 = np.repeat(x1, P0, axis=1)
    x2 = np.repeat(x2, P0, axis=1)
    y0 = np.tile(st.y, (n, 1))
    out = integrate(fields, RdeState(y0), x1, x2, np.full(k1 - k0, paths[0].grid.h), max_increment)
    return out.y.reshape((n,) + shape + (2,))


def composition_defect(
    fields: CharacteristicFields,
    rp: GeometricRoughPath,
    s: float,
    t: float,
    x,
    xi,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> float:
    """sup |psi_{s,t}(phi_{s,t}(y)) - y| over the seeds, both maps integrated exactly at the points."""
    fwd = forward_flow(fields, rp, s, t, x, xi, False, max_increment)
    back = inverse_flow(fields, rp, s, t, fwd.maps[..., 0], fwd.maps[..., 1], False, max_increment)
    return float(np.abs(back.maps - fwd.seeds).max())


def semigroup_defect(
    fields: CharacteristicFields,
    rp: GeometricRoughPath,
    s: float,
    t: float,
    u: float,
    x,
    xi,
    max_increment: float = DEFAULT_MAX_INCREMENT,
) -> float:
    """sup |phi_{s,u} - phi_{t,u} o phi_{s,t}| over the seeds."""
    whole = forward_flow(fields, rp, s, u, x, xi, False, max_increment)
    first = forward_flow(fields, rp, s, t, x, xi, False, max_increment)
    second = forward_flow(
        fields, rp, t, u, first.maps[..., 0], first.maps[..., 1], False, max_increment
    )
    return float(np.abs(whole.maps - second.maps).max())


def sign_preservation_check(flow: FlowField) -> float:
    """Largest |xi-image| among seeds whose xi-image has the wrong sign (0 if none)."""
    xi0 = flow.seeds[..., 1]
    xi1 = flow.maps[..., 1]
    bad = np.sign(xi1) != np.sign(xi0)
    if not np.any(bad):
        return 0.0
    return float(np.maximum(np.abs(xi1[bad]), np.abs(xi0[bad])).max())
