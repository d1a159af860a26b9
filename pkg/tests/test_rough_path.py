from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughkin.rough_path import (
    GeometricRoughPath,
    RoughPathError,
    TimeGrid,
    brownian_samples,
    check_defects,
    holder_norm,
    joint_lift,
    lift_smooth_path,
    reversed_increment,
    sample_brownian_lift,
    time_lift,
)


def test_time_grid_nodes_and_index():
    g = TimeGrid(0.0, 1.0, 8)
    assert g.h == 0.125
    assert g.index_of(0.375) == 3
    with pytest.raises(RoughPathError):
        g.index_of(0.3)
    with pytest.raises(RoughPathError):
        TimeGrid(1.0, 0.0, 4)


def test_lift_of_t_t2_matches_exact_iterated_integrals():
    # int_0^1 t d(t^2) = 2/3, int_0^1 t^2 dt = 1/3
    g = TimeGrid(0.0, 1.0, 1)
    t = np.linspace(0, 1, 4097)
    rp = lift_smooth_path(np.c_[t, t**2], 2.5, g)
    exact = np.array([[0.5, 2 / 3], [1 / 3, 0.5]])
    assert np.allclose(rp.level2[0], exact, atol=1e-6)
    assert np.allclose(rp.level1[0], [1.0, 1.0])


def test_lift_requires_subresolution():
    g = TimeGrid(0.0, 1.0, 8)
    with pytest.raises(RoughPathError):
        lift_smooth_path(np.linspace(0, 1, 17), 2.5, g)  # only 2x
    with pytest.raises(RoughPathError):
        lift_smooth_path(np.full(33, np.nan), 2.5, g)


def test_p_outside_range_rejected():
    g = TimeGrid(0.0, 1.0, 4)
    with pytest.raises(RoughPathError):
        GeometricRoughPath(g, np.zeros(4), np.zeros(4), p=3.5)


def test_time_lift_level2_is_half_square():
    g = TimeGrid(0.0, 1.0, 16)
    rp = time_lift(g)
    assert np.allclose(rp.level1[:, 0], 1 / 16)
    assert np.allclose(rp.level2[:, 0, 0], 0.5 / 256)


def test_chen_composition_matches_anchored_signature():
    rp = sample_brownian_lift(2, TimeGrid(0.0, 1.0, 64), seed=5)
    x1, x2 = rp.increment(0, 64)
    assert np.allclose(x2, rp.anchored[-1], atol=1e-12)
    assert np.allclose(x1, rp.values()[-1])


@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_brownian_lift_defects_small(seed, dim):
    rp = sample_brownian_lift(dim, TimeGrid(0.0, 1.0, 32), substeps=8, seed=seed)
    d = check_defects(rp)
    assert d.ok()
    assert d.holder_norm > 0


@given(st.integers(0, 2**31 - 1))
def test_reversal_is_group_inverse(seed):
    rp = sample_brownian_lift(2, TimeGrid(0.0, 1.0, 4), seed=seed)
    x1, x2 = rp.level1[0], rp.level2[0]
    y1, y2 = reversed_increment(x1, x2)
    # Chen product of an increment with its inverse is the identity
    assert np.allclose(x1 + y1, 0)
    assert np.allclose(x2 + y2 + np.outer(x1, y1), 0, atol=1e-14)
    # for geometric increments the inverse level 2 is the transpose
    assert np.allclose(y2, x2.T, atol=1e-14)


def test_reversed_path_composes_to_inverse():
    rp = sample_brownian_lift(2, TimeGrid(0.0, 1.0, 16), seed=1)
    rev = rp.reversed()
    x1, x2 = rp.increment(0, 16)
    y1, y2 = rev.increment(0, 16)
    assert np.allclose(y1, -x1)
    assert np.allclose(x2 + y2 + np.outer(x1, y1), 0, atol=1e-12)


def test_joint_lift_blocks():
    g = TimeGrid(0.0, 1.0, 32)
    z = sample_brownian_lift(1, g, substeps=16, seed=2)
    w = brownian_samples(1, g, 16, 3)
    lam = joint_lift(z, w, g)
    assert lam.dim == 2
    assert np.allclose(lam.level2[:, 0, 0], z.level2[:, 0, 0])
    mixed = lam.level2[:, 0, 1] + lam.level2[:, 1, 0]
    assert np.allclose(mixed, lam.level1[:, 0] * lam.level1[:, 1], atol=1e-14)
    assert check_defects(lam).ok()


def test_joint_lift_mixed_block_is_left_point_sum():
    g = TimeGrid(0.0, 1.0, 1)
    tf = np.linspace(0, 1, 5)
    z = lift_smooth_path(tf, 2.5, g)
    w = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    lam = joint_lift(z, w, g)
    # sum_k (z_k - z_0) (w_{k+1} - w_k) with z_k = k/4
    expect = sum(tf[k] * (w[k + 1] - w[k]) for k in range(4))
    assert lam.level2[0, 0, 1] == pytest.approx(expect)


def test_holder_norm_of_linear_path():
    # |x1| = t, |x2|^(1/2) = t / sqrt 2, so the ratio t / t^(1/p) peaks at t = 1
    rp = time_lift(TimeGrid(0.0, 1.0, 8))
    assert holder_norm(rp) == pytest.approx(1.0)


def test_arrays_are_read_only():
    rp = time_lift(TimeGrid(0.0, 1.0, 4))
    with pytest.raises(ValueError):
        rp.level1[0, 0] = 2.0
