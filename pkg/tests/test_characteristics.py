from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughkin.characteristics import (
    RdeState,
    StepSizeError,
    composition_defect,
    forward_flow,
    geodesic_piece,
    integrate,
    inverse_flow,
    rde_step,
    semigroup_defect,
    sign_preservation_check,
)
from roughkin.coefficients import (
    FluxModel,
    ForcingJet,
    assemble_characteristic_fields,
    burgers,
    burgers_jet,
    linear_multiplicative_noise,
    linear_transport,
    modulated_burgers,
)
from roughkin.rough_path import (
    TimeGrid,
    brownian_samples,
    holder_norm,
    joint_lift,
    lift_smooth_path,
    sample_brownian_lift,
    time_lift,
)


def test_zero_driver_is_identity():
    _, f = assemble_characteristic_fields(modulated_burgers(0.5, 1.0))
    st0 = RdeState.at([0.3, 1.0], [0.5, -0.7])
    out = rde_step(st0, f, np.zeros(1), np.zeros((1, 1)), 0.0)
    assert np.array_equal(out.y, st0.y)


def test_linear_field_step_matches_truncated_exponential():
    # the W column of g = xi is V(y) = (0, xi); with x1 = 0.1, x2 = x1^2/2
    forced, _ = assemble_characteristic_fields(linear_multiplicative_noise(1.0))
    st0 = RdeState.at([0.0], [1.0])
    x1 = np.array([0.0, 0.1])
    x2 = np.array([[0.0, 0.0], [0.0, 0.005]])
    out = rde_step(st0, forced, x1, x2, 0.0)
    assert out.y[0, 1] == pytest.approx(1.105, abs=1e-15)
    assert abs(out.y[0, 1] - np.exp(0.1)) < 2e-4


def test_constant_speed_shift_is_exact():
    _, f = assemble_characteristic_fields(linear_transport(0.7))
    st0 = RdeState.at([0.2, 0.9], [1.0, -1.0])
    out = rde_step(st0, f, np.array([0.3]), np.array([[0.045]]), 0.0)
    assert np.allclose(out.y[:, 0], [0.2 + 0.21, 0.9 + 0.21], atol=1e-15)
    assert np.array_equal(out.y[:, 1], st0.y[:, 1])


def test_large_step_rejected():
    _, f = assemble_characteristic_fields(burgers())
    with pytest.raises(StepSizeError):
        rde_step(RdeState.at([0.0], [2.0]), f, np.array([1.0]), np.array([[0.5]]))


def test_step_jacobian_matches_finite_difference():
    forced, _ = assemble_characteristic_fields(modulated_burgers(0.5, 1.0, lam=0.3))
    x1 = np.array([0.05, -0.04])
    x2 = 0.5 * np.outer(x1, x1) + np.array([[0, 0.001], [-0.001, 0]])
    y0 = np.array([0.4, 0.8])
    out = rde_step(RdeState(y0[None], np.eye(2)[None]), forced, x1, x2, 0.01)
    h = 1e-6
    fd = np.zeros((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        p = rde_step(RdeState((y0 + e)[None]), forced, x1, x2, 0.01).y[0]
        m = rde_step(RdeState((y0 - e)[None]), forced, x1, x2, 0.01).y[0]
        fd[:, j] = (p - m) / (2 * h)
    assert np.allclose(out.J[0], fd, atol=1e-8)


@given(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5), st.integers(1, 6)
)
def test_geodesic_pieces_compose_to_the_increment(a, b, area, k):
    x1 = np.array([a, b])
    x2 = 0.5 * np.outer(x1, x1) + np.array([[0.0, area], [-area, 0.0]])
    n = 2**k
    p1, p2 = geodesic_piece(x1, x2, n)
    y1, y2 = np.zeros(2), np.zeros((2, 2))
    for _ in range(n):
        y2 = y2 + p2 + np.outer(y1, p1)
        y1 = y1 + p1
    assert np.allclose(y1, x1)
    assert np.allclose(y2, x2, atol=1e-12)


def test_burgers_straight_characteristics():
    _, f = assemble_characteristic_fields(burgers())
    rp = time_lift(TimeGrid(0.0, 1.0, 16))
    x = np.array([0.1, 0.5, 0.9])
    xi = np.array([-1.0, 0.25, 2.0])
    fl = forward_flow(f, rp, 0.25, 0.75, x, xi)
    assert np.allclose(fl.maps[:, 0], x + 0.5 * xi, atol=1e-14)
    assert np.array_equal(fl.maps[:, 1], xi)
    assert np.allclose(fl.jac, 1.0)


def test_constant_speed_inverse_flow():
    _, f = assemble_characteristic_fields(linear_transport(1.5))
    g = TimeGrid(0.0, 1.0, 32)
    t = g.refine(4).nodes
    z = t + 0.3 * np.sin(5 * t)
    rp = lift_smooth_path(z, 2.5, g)
    th = inverse_flow(f, rp, 0.25, 0.5, np.array([0.3]), np.array([0.7]))
    dz = (0.5 + 0.3 * np.sin(2.5)) - (0.25 + 0.3 * np.sin(1.25))
    assert th.maps[0, 0] == pytest.approx(0.3 - 1.5 * dz, abs=1e-12)
    assert th.maps[0, 1] == 0.7


def test_zero_driver_inverse_is_identity():
    _, f = assemble_characteristic_fields(modulated_burgers(0.5, 1.0))
    rp = lift_smooth_path(np.zeros(65), 2.5, TimeGrid(0.0, 1.0, 16))
    x, xi = np.array([0.1, 2.0]), np.array([0.4, -1.0])
    th = inverse_flow(f, rp, 0.0, 1.0, x, xi)
    assert np.array_equal(th.maps, th.seeds)


@pytest.mark.parametrize(
    "model", [burgers(), modulated_burgers(0.5, 1.0), linear_transport(0.8)], ids=lambda m: m.name
)
def test_unforced_flow_preserves_volume_and_inverts(model):
    _, f = assemble_characteristic_fields(model)
    rp = sample_brownian_lift(1, TimeGrid(0.0, 1.0, 64), seed=11)
    X, XI = np.meshgrid(np.linspace(0, 2 * np.pi, 12), np.linspace(-1.5, 1.5, 12), indexing="ij")
    fl = forward_flow(f, rp, 0.0, 1.0, X, XI)
    assert fl.jacobian_defect() <= 1e-3
    assert composition_defect(f, rp, 0.0, 1.0, X, XI) <= 1e-3
    assert semigroup_defect(f, rp, 0.0, 0.5, 1.0, X, XI) <= 1e-3


def test_jacobian_agrees_with_neighbour_differences():
    _, f = assemble_characteristic_fields(modulated_burgers(0.5, 1.0))
    rp = sample_brownian_lift(1, TimeGrid(0.0, 0.5, 32), seed=4)
    x0, xi0, h = 1.0, 0.8, 1e-5
    fl = forward_flow(f, rp, 0.0, 0.5, np.array([x0]), np.array([xi0]))
    p = forward_flow(f, rp, 0.0, 0.5, np.array([x0]), np.array([xi0 + h]), False)
    m = forward_flow(f, rp, 0.0, 0.5, np.array([x0]), np.array([xi0 - h]), False)
    assert np.allclose(fl.dxi[0], (p.maps[0] - m.maps[0]) / (2 * h), atol=1e-6)


@pytest.mark.parametrize("lam", [0.3, 1.0])
def test_sign_preserved_with_forcing(lam):
    forced, _ = assemble_characteristic_fields(modulated_burgers(0.5, 1.0, lam=lam))
    g = TimeGrid(0.0, 1.0, 64)
    rp = joint_lift(sample_brownian_lift(1, g, seed=1), brownian_samples(1, g, 16, 2), g)
    X, XI = np.meshgrid(np.linspace(0, 6, 9), np.linspace(-1.5, 1.5, 11), indexing="ij")
    fl = forward_flow(forced, rp, 0.0, 1.0, X, XI)
    assert sign_preservation_check(fl) == 0.0
    assert np.all(fl.maps[:, 5, 1] == 0.0)  # xi = 0 row stays on the axis


def test_sign_check_flags_broken_forcing():
    def bad(x, xi):
        one = np.ones(np.shape(x) + (1,))
        z = 0 * one
        return ForcingJet(one, z, z, z, z, z)

    forced, _ = assemble_characteristic_fields(FluxModel("bad", 1, 1, burgers_jet, bad))
    g = TimeGrid(0.0, 1.0, 16)
    rp = joint_lift(time_lift(g), brownian_samples(1, g, 16, 0), g)
    fl = forward_flow(forced, rp, 0.0, 1.0, np.zeros(3), np.array([-0.01, 0.0, 0.01]))
    assert sign_preservation_check(fl) > 0


def test_sign_check_without_zero_in_grid():
    _, f = assemble_characteristic_fields(burgers())
    rp = time_lift(TimeGrid(0.0, 1.0, 4))
    fl = forward_flow(f, rp, 0.0, 1.0, np.zeros(4), np.array([-0.75, -0.25, 0.25, 0.75]))
    assert sign_preservation_check(fl) == 0.0


def test_per_node_results_do_not_depend_on_ordering():
    _, f = assemble_characteristic_fields(modulated_burgers(0.5, 1.0))
    rp = sample_brownian_lift(1, TimeGrid(0.0, 1.0, 32), seed=9)
    rng = np.random.default_rng(0)
    x, xi = rng.uniform(0, 6, 50), rng.uniform(-1.5, 1.5, 50)
    perm = rng.permutation(50)
    a = forward_flow(f, rp, 0.0, 1.0, x, xi)
    b = forward_flow(f, rp, 0.0, 1.0, x[perm], xi[perm])
    assert np.array_equal(a.maps[perm], b.maps)
    assert np.array_equal(a.jac[perm], b.jac)


def test_increment_regularity():
    # sup |phi_{s,t} - id| <= C |t - s|^(1/p) with C = 2 sup|V| * Hoelder norm
    _, f = assemble_characteristic_fields(burgers())
    rp = sample_brownian_lift(1, TimeGrid(0.0, 1.0, 64), seed=3)
    C = 2 * 1.5 * holder_norm(rp)
    X, XI = np.meshgrid(np.linspace(0, 1, 5), np.linspace(-1.5, 1.5, 7), indexing="ij")
    for k in (1, 4, 16, 64):
        t = k / 64
        fl = forward_flow(f, rp, 0.0, t, X, XI, False)
        assert np.abs(fl.maps - fl.seeds).max() <= C * t ** (1 / rp.p)


def test_integrate_per_node_drivers():
    _, f = assemble_characteristic_fields(linear_transport(1.0))
    st0 = RdeState.at([0.0, 0.0], [0.0, 0.0])
    x1 = np.array([[[0.1], [0.2]], [[0.1], [0.2]]])
    x2 = 0.5 * x1[..., None] ** 2
    out = integrate(f, st0, x1, x2, np.zeros((2, 2)))
    assert np.allclose(out.y[:, 0], [0.2, 0.4])
