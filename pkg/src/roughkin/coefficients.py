"""Flux and forcing coefficients of the rough conservation law (one space dimension).

A model is described by two jets evaluated pointwise on arrays of ``(x, xi)``:

* the flux jet: A and its partial derivatives up to third order, one
  column per rough driver component (shape ``(..., M)``);
* the forcing jet: g and its partials up to second order, one column per
  Brownian component (shape ``(..., K)``).

Everything else (a = dA/du, b = dA/dx, G^2, dG^2/dxi and the vector fields of
the characteristic systems) is derived from the jets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class CoefficientError(ValueError):
    """Raised when a coefficient bundle violates its contract."""


class FluxJet(NamedTuple):
    A: np.ndarray
    Ax: np.ndarray
    Axi: np.ndarray
    Axx: np.ndarray
    Axxi: np.ndarray
    Axixi: np.ndarray
    Axxx: np.ndarray
    Axxxi: np.ndarray
    Axxixi: np.ndarray
    Axixixi: np.ndarray


class ForcingJet(NamedTuple):
    g: np.ndarray
    gx: np.ndarray
    gxi: np.ndarray
    gxx: np.ndarray
    gxxi: np.ndarray
    gxixi: np.ndarray


@dataclass(frozen=True)
class FluxModel:
    name: str
    M: int
    K: int
    flux_jet: Callable[[np.ndarray, np.ndarray], FluxJet]
    forcing_jet: Callable[[np.ndarray, np.ndarray], ForcingJet] | None = None
    params: dict = field(default_factory=dict)
    period: float | None = None

    def A(self, x, xi):
        return self.flux_jet(*np.broadcast_arrays(x, xi)).A

    def a(self, x, xi):
        return self.flux_jet(*np.broadcast_arrays(x, xi)).Axi

    def b(self, x, xi):
        return self.flux_jet(*np.broadcast_arrays(x, xi)).Ax

    def forcing(self, x, xi) -> ForcingJet:
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        if self.forcing_jet is None or self.K == 0:
            z = np.zeros(x.shape + (0,))
            return ForcingJet(z, z, z, z, z, z)
        return self.forcing_jet(x, xi)

    def g(self, x, xi):
        return self.forcing(x, xi).g

    def Gsq(self, x, xi):
        return np.sum(self.g(x, xi) ** 2, axis=-1)

    def dGsq_dxi(self, x, xi):
        f = self.forcing(x, xi)
        return 2.0 * np.sum(f.g * f.gxi, axis=-1)


def _zeros_like_cols(x, m):
    return np.zeros(np.shape(x) + (m,))


def _flux(x, **parts) -> FluxJet:
    z = _zeros_like_cols(x, 1)
    vals = {name: z for name in FluxJet._fields}
    for name, v in parts.items():
        vals[name] = np.asarray(v, dtype=float)[..., None] + z
    return FluxJet(**vals)


def burgers_jet(x, xi) -> FluxJet:
    return _flux(x, A=0.5 * xi**2, Axi=xi, Axixi=1.0)


def modulated_burgers_jet(amp: float, k: float):
    """A = c(x) xi^2 / 2 with c(x) = 1 + amp sin(k x)."""

    def jet(x, xi):
        s, c = np.sin(k * x), np.cos(k * x)
        c0 = 1.0 + amp * s
        c1 = amp * k * c
        c2 = -amp * k**2 * s
        c3 = -amp * k**3 * c
        q = 0.5 * xi**2
        return _flux(
            x,
            A=c0 * q, Ax=c1 * q, Axi=c0 * xi,
            Axx=c2 * q, Axxi=c1 * xi, Axixi=c0,
            Axxx=c3 * q, Axxxi=c2 * xi, Axxixi=c1,
        )

    return jet


def linear_transport_jet(speed: float):
    def jet(x, xi):
        return _flux(x, A=speed * xi, Axi=speed + 0.0 * xi)

    return jet


def zero_flux_jet(x, xi) -> FluxJet:
    return _flux(x)


def linear_noise_jet(lam: float):
    """g(x, xi) = lam * xi (one Brownian component)."""

    def jet(x, xi):
        z = np.zeros(np.shape(x) + (1,))
        return ForcingJet(lam * np.asarray(xi, float)[..., None], z, z + lam, z, z, z)

    return jet


def _with_noise(name, jet, lam, params, period):
    lam = float(lam)
    if lam == 0.0:
        return FluxModel(name, 1, 0, jet, None, params, period)
    return FluxModel(name, 1, 1, jet, linear_noise_jet(lam), params, period)


def burgers(lam: float = 0.0, period: float | None = None) -> FluxModel:
    return _with_noise("burgers", burgers_jet, lam, {"lam": lam}, period)


def modulated_burgers(amp: float = 0.5, wavenumber: float = 1.0, lam: float = 0.0) -> FluxModel:
    params = {"amp": amp, "wavenumber": wavenumber, "lam": lam}
    jet = modulated_burgers_jet(float(amp), float(wavenumber))
    return _with_noise("modulated_burgers", jet, lam, params, 2 * np.pi / float(wavenumber))


def linear_transport(speed: float = 1.0, lam: float = 0.0) -> FluxModel:
    jet = linear_transport_jet(float(speed))
    return _with_noise("linear_transport", jet, lam, {"speed": speed, "lam": lam}, None)


def linear_multiplicative_noise(lam: float = 1.0) -> FluxModel:
    """No flux, forcing g = lam * xi."""
    return _with_noise("linear_multiplicative_noise", zero_flux_jet, lam, {"lam": lam}, None)


REGISTRY: dict[str, Callable[..., FluxModel]] = {
    "burgers": burgers,
    "modulated_burgers": modulated_burgers,
    "linear_transport": linear_transport,
    "linear_multiplicative_noise": linear_multiplicative_noise,
}


def build_model(name: str, **params) -> FluxModel:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise CoefficientError(f"unknown model {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**{k: float(v) for k, v in params.items()})


@dataclass(frozen=True)
class CoefficientReport:
    null_condition_defect: float
    derivative_defect: float
    bound_estimates: dict[str, float]


def _rel_err(approx, exact):
    return np.abs(approx - exact) / np.maximum(1.0, np.abs(exact))


def validate(model: FluxModel, box, n_samples: int = 64) -> CoefficientReport:
    """Sampled check of the null condition, derivative consistency and bounds.

    ``box`` is ((x_lo, x_hi), (xi_lo, xi_hi)). Raises ``CoefficientError`` if
    b(x, 0) or g(x, 0) exceed 1e-9 somewhere or an evaluation is not finite.
    """
    (x_lo, x_hi), (xi_lo, xi_hi) = box
    if not (x_lo < x_hi and xi_lo < xi_hi):
        raise CoefficientError(f"empty box {box}")
    if n_samples < 16:
        raise CoefficientError("n_samples must be >= 16")

    xs = np.linspace(x_lo, x_hi, n_samples)
    xis = np.linspace(xi_lo, xi_hi, n_samples)
    X, XI = np.meshgrid(xs, xis, indexing="ij")

    fj = model.flux_jet(X, XI)
    gj = model.forcing(X, XI)
    for arr in (*fj, *gj):
        if not np.all(np.isfinite(arr)):
            raise CoefficientError(f"{model.name}: non-finite coefficient values")

    zero = np.zeros_like(xs)
    null = max(
        float(np.abs(model.b(xs, zero)).max(initial=0.0)),
        float(np.abs(model.g(xs, zero)).max(initial=0.0)),
    )

    h = 1e-5

    def dx(f):
        return (f(X + h, XI) - f(X - h, XI)) / (2 * h)

    def dxi(f):
        return (f(X, XI + h) - f(X, XI - h)) / (2 * h)

    def fl(name):
        return lambda x, xi: getattr(model.flux_jet(x, xi), name)

    def fo(name):
        return lambda x, xi: getattr(model.forcing(x, xi), name)

    checks = [
        (dxi(fl("A")), fj.Axi), (dx(fl("A")), fj.Ax),
        (dx(fl("Ax")), fj.Axx), (dxi(fl("Ax")), fj.Axxi), (dxi(fl("Axi")), fj.Axixi),
        (dx(fl("Axx")), fj.Axxx), (dxi(fl("Axx")), fj.Axxxi),
        (dxi(fl("Axxi")), fj.Axxixi), (dxi(fl("Axixi")), fj.Axixixi),
        (dx(fl("Axi")), fj.Axxi),
        (dx(fo("g")), gj.gx), (dxi(fo("g")), gj.gxi),
        (dx(fo("gx")), gj.gxx), (dxi(fo("gx")), gj.gxxi), (dxi(fo("gxi")), gj.gxixi),
        (dxi(model.Gsq), model.dGsq_dxi(X, XI)),
    ]
    deriv = max(float(_rel_err(a, e).max(initial=0.0)) for a, e in checks)

    def sup(v):
        return float(np.abs(v).max(initial=0.0))

    bounds = {
        "a": sup(fj.Axi), "b": sup(fj.Ax), "g": sup(gj.g),
        "da": max(sup(fj.Axxi), sup(fj.Axixi)),
        "db": max(sup(fj.Axx), sup(fj.Axxi)),
        "dg": max(sup(gj.gx), sup(gj.gxi)),
        "d2a": max(sup(fj.Axxxi), sup(fj.Axxixi), sup(fj.Axixixi)),
        "d2b": max(sup(fj.Axxx), sup(fj.Axxxi), sup(fj.Axxixi)),
        "d2g": max(sup(gj.gxx), sup(gj.gxxi), sup(gj.gxixi)),
    }
    if null > 1e-9:
        raise CoefficientError(
            f"{model.name}: null condition b(x,0) = g(x,0) = 0 violated by {null:.3g}"
        )
    return CoefficientReport(null, deriv, bounds)


def divergence_defect(model: FluxModel, box, n_samples: int = 64) -> float:
    """max |d_x a - d_xi b| on a sample of the box (zero for consistent jets)."""
    (x_lo, x_hi), (xi_lo, xi_hi) = box
    X, XI = np.meshgrid(
        np.linspace(x_lo, x_hi, n_samples), np.linspace(xi_lo, xi_hi, n_samples), indexing="ij"
    )
    h = 1e-5
    da_dx = (model.a(X + h, XI) - model.a(X - h, XI)) / (2 * h)
    db_dxi = (model.b(X, XI + h) - model.b(X, XI - h)) / (2 * h)
    return float(np.abs(da_dx - db_dxi).max())


class FieldEval(NamedTuple):
    """Vector fields of a characteristic system at a batch of points.

    State ordering is (x, xi). ``V`` has shape (P, D, 2) for the D driver
    columns (dz^1..dz^M[, dW^1..dW^K]); ``DV`` (P, D, 2, 2) with
    ``DV[p, d, i, j] = d V_i / d y_j``; ``D2V`` (P, D, 2, 2, 2) or None;
    ``drift`` (P, 2) multiplies dt and ``Ddrift`` is its Jacobian.
    """

    V: np.ndarray
    DV: np.ndarray
    D2V: np.ndarray | None
    drift: np.ndarray
    Ddrift: np.ndarray


@dataclass(frozen=True)
class CharacteristicFields:
    """Vector-field bundle of a characteristic system.

    With ``forced=True`` this is the system whose inverse flow realizes the
    BGK transport: dxi = -b dz + g dW - (1/4) dG^2/dxi dt, dx = a dz. With
    ``forced=False`` the Brownian and dt columns are dropped.
    """

    model: FluxModel
    forced: bool

    @property
    def n_columns(self) -> int:
        return self.model.M + (self.model.K if self.forced else 0)

    def evaluate(self, x, xi, order: int = 1) -> FieldEval:
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        P = x.shape[0]
        M, K = self.model.M, self.model.K if self.forced else 0
        fj = self.model.flux_jet(x, xi)
        D = M + K
        V = np.zeros((P, D, 2))
        DV = np.zeros((P, D, 2, 2))
        V[:, :M, 0] = fj.Axi
        V[:, :M, 1] = -fj.Ax
        DV[:, :M, 0, 0] = fj.Axxi
        DV[:, :M, 0, 1] = fj.Axixi
        DV[:, :M, 1, 0] = -fj.Axx
        DV[:, :M, 1, 1] = -fj.Axxi
        D2V = None
        if order >= 2:
            D2V = np.zeros((P, D, 2, 2, 2))
            D2V[:, :M, 0, 0, 0] = fj.Axxxi
            D2V[:, :M, 0, 0, 1] = D2V[:, :M, 0, 1, 0] = fj.Axxixi
            D2V[:, :M, 0, 1, 1] = fj.Axixixi
            D2V[:, :M, 1, 0, 0] = -fj.Axxx
            D2V[:, :M, 1, 0, 1] = D2V[:, :M, 1, 1, 0] = -fj.Axxxi
            D2V[:, :M, 1, 1, 1] = -fj.Axxixi
        drift = np.zeros((P, 2))
        Ddrift = np.zeros((P, 2, 2))
        if K:
            gj = self.model.forcing(x, xi)
            V[:, M:, 1] = gj.g
            DV[:, M:, 1, 0] = gj.gx
            DV[:, M:, 1, 1] = gj.gxi
            if D2V is not None:
                D2V[:, M:, 1, 0, 0] = gj.gxx
                D2V[:, M:, 1, 0, 1] = D2V[:, M:, 1, 1, 0] = gj.gxxi
                D2V[:, M:, 1, 1, 1] = gj.gxixi
            # -(1/4) d_xi G^2 = -(1/2) sum_k g_k d_xi g_k
            drift[:, 1] = -0.5 * np.sum(gj.g * gj.gxi, axis=-1)
            Ddrift[:, 1, 0] = -0.5 * np.sum(gj.gx * gj.gxi + gj.g * gj.gxxi, axis=-1)
            Ddrift[:, 1, 1] = -0.5 * np.sum(gj.gxi**2 + gj.g * gj.gxixi, axis=-1)
        return FieldEval(V, DV, D2V, drift, Ddrift)

    def columns(self, x, xi) -> np.ndarray:
        """Right-hand side columns in the order (dt, dz^1..dz^M, dW^1..dW^K); shape (P, 1+D, 2)."""
        ev = self.evaluate(np.atleast_1d(x), np.atleast_1d(xi))
        return np.concatenate([ev.drift[:, None, :], ev.V], axis=1)


def assemble_characteristic_fields(model: FluxModel) -> tuple[CharacteristicFields, CharacteristicFields]:
    """(forced, unforced) characteristic bundles of ``model``."""
    return CharacteristicFields(model, True), CharacteristicFields(model, False)
