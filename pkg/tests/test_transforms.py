import numpy as np
import pytest
from hypothesis import given, strategies as st

from zoomsat.errors import ConfigError
from zoomsat.plant import FeedforwardPlant, integrator_chain
from zoomsat.transforms import (
    TransformParams,
    apply_pascal,
    apply_pascal_inv,
    build_coord_matrix,
    from_scaled_sample,
    nonlin_part,
    pascal_coeffs,
    pascal_inv_coeffs,
    quad_domain,
    quad_gain,
    sat_unit,
    saturation,
    scaled_rhs,
    to_scaled_sample,
    upper_ones,
)


def tp(n=2, dilation=2.0, gain=0.5, quad=1.0, delay=0.4):
    return TransformParams(
        n=n, time_dilation=dilation, gain=gain, quad_bound=quad, delay=delay
    )


# -- coefficient transforms ----------------------------------------------------


def test_pascal_rows():
    assert pascal_coeffs(1, 2).tolist() == [1.0, 1.0]
    assert pascal_coeffs(1, 3).tolist() == [1.0, 2.0, 1.0]
    assert pascal_coeffs(3, 3).tolist() == [1.0]


def test_pascal_inverse_rows():
    assert pascal_inv_coeffs(1, 2).tolist() == [1.0, -1.0]
    assert pascal_inv_coeffs(1, 3).tolist() == [1.0, -2.0, 1.0]
    assert pascal_inv_coeffs(3, 3).tolist() == [1.0]


def test_pascal_index_range():
    with pytest.raises(ConfigError):
        pascal_coeffs(0, 3)
    with pytest.raises(ConfigError):
        pascal_inv_coeffs(4, 3)


def test_pascal_inversion_identity():
    rng = np.random.default_rng(7)
    for n in range(1, 7):
        a = rng.normal(size=(1000, n))
        for row in a[:50]:  # elementwise spot check on layered compositions
            fwd = [apply_pascal(i, n, row[i - 1 :]) for i in range(1, n + 1)]
            for i in range(1, n + 1):
                back = apply_pascal_inv(i, n, np.array(fwd[i - 1 :]))
                assert abs(back - row[i - 1]) < 1e-10


# -- mixing matrices -------------------------------------------------------------


def test_coord_matrix_two_dim():
    p = tp(n=2, dilation=3.0, gain=0.5, quad=1.0)
    cm = build_coord_matrix(p)
    scale = p.quad_bound / p.gain
    expected = scale * np.array([[1.0, 3.0], [0.0, 3.0]])
    assert np.allclose(cm.mat, expected)


def test_coord_matrix_scalar():
    p = tp(n=1, dilation=5.0, gain=0.25, quad=1.0)
    cm = build_coord_matrix(p)
    assert cm.mat.shape == (1, 1)
    assert cm.mat[0, 0] == pytest.approx(4.0)


def test_coord_matrix_inverse_identity():
    rng = np.random.default_rng(3)
    for n in range(1, 7):
        p = tp(n=n, dilation=1.0 + rng.uniform(0, 5), gain=0.3, quad=1.0)
        cm = build_coord_matrix(p)
        assert np.max(np.abs(cm.mat @ cm.inv - np.eye(n))) <= 1e-12


def test_coord_matrix_subsystems_nest():
    p = tp(n=4, dilation=2.0)
    full = build_coord_matrix(p, start=1)
    for start in (2, 3, 4):
        sub = build_coord_matrix(p, start=start)
        assert np.allclose(full.mat[start - 1 :, start - 1 :], sub.mat)


# -- saturation -------------------------------------------------------------------


def test_saturation_identity_and_plateau():
    assert saturation(0.5, 1.0) == 0.5
    assert saturation(2.0, 1.0) == 1.0
    assert saturation(-2.0, 1.0) == -1.0
    assert saturation(1.0, 1.0 / 30.0) == pytest.approx(1.0 / 30.0)


def test_saturation_edges_exact():
    assert sat_unit(19.0 / 20.0) == 19.0 / 20.0
    assert sat_unit(21.0 / 20.0) == 1.0


@given(st.floats(-10, 10))
def test_sat_unit_odd(s):
    assert sat_unit(-s) == pytest.approx(-sat_unit(s), abs=1e-15)


def test_sat_unit_slope_in_unit_interval():
    s = np.linspace(-2.0, 2.0, 20001)
    vals = sat_unit(s)
    slopes = np.diff(vals) / np.diff(s)
    assert np.all(slopes >= -1e-9)
    assert np.all(slopes <= 1.0 + 1e-9)


def test_sat_unit_continuously_differentiable_at_edges():
    for edge in (19.0 / 20.0, 21.0 / 20.0):
        eps = 1e-7
        left = (sat_unit(edge) - sat_unit(edge - eps)) / eps
        right = (sat_unit(edge + eps) - sat_unit(edge)) / eps
        assert abs(left - right) < 1e-5


def test_kernel_saturation_matches_reference():
    from zoomsat._kernels import _sat_unit as kernel_sat

    for s in np.linspace(-3, 3, 4001):
        assert kernel_sat(s) == sat_unit(s)


# -- transformed dynamics -----------------------------------------------------------


def test_scaled_rhs_chain_is_linear_coupling():
    p = tp(n=3, dilation=2.5, gain=0.5, delay=0.0)
    cm = build_coord_matrix(p)
    plant = integrator_chain(3)
    rng = np.random.default_rng(5)
    gam = upper_ones(3)
    for _ in range(20):
        z = rng.normal(size=3)
        v = rng.normal()
        dz, derr = scaled_rhs(p, cm, plant, z, np.zeros(3), np.zeros(3), v)
        assert np.allclose(dz, gam @ z + v, atol=1e-12)
        assert np.allclose(derr, 0.0, atol=1e-12)


def test_scaled_rhs_equilibrium():
    p = tp()
    cm = build_coord_matrix(p)
    plant = integrator_chain(2)
    dz, derr = scaled_rhs(p, cm, plant, np.zeros(2), np.zeros(2), np.zeros(2), 0.0)
    assert np.all(dz == 0.0) and np.all(derr == 0.0)


def test_nonlin_part_last_component_zero():
    p = tp(n=3, dilation=2.0)
    plant = FeedforwardPlant(
        n=3, stages=((((2, 0), 0.4),), (((2,), 0.3),)), quad_bound=1.0, init_box=[1, 1, 1]
    )
    cm = build_coord_matrix(p)
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = rng.normal(size=3)
        assert nonlin_part(p, cm, plant, w)[-1] == 0.0


def test_transformed_curvature_bound_by_sampling():
    # quadratic stage at the structural limit; sampled inside the stated box
    p = tp(n=2, dilation=4.0, gain=0.5, quad=1.0, delay=0.0)
    plant = FeedforwardPlant(
        n=2, stages=((((2,), 1.0),),), quad_bound=1.0, init_box=[1, 1]
    )
    cm = build_coord_matrix(p)
    bound = quad_gain(p)
    radius = quad_domain(p)
    for z2 in np.linspace(-radius, radius, 101):
        w = np.array([0.0, z2])
        mag = abs(nonlin_part(p, cm, plant, w)[0])
        assert mag <= bound * (z2 * z2) * (1 + 1e-9) + 1e-15


# -- trace transforms -----------------------------------------------------------------


def test_to_scaled_zero_sample(a1):
    st_ = a1["scaled"]
    # before the first delivery everything decoder-side is still zero
    assert np.allclose(st_.control[: st_.i_start], 0.0)


def test_scalar_input_change(a1):
    cp, tr = a1["cp"], a1["trace"]
    st_ = a1["scaled"]
    k = cp.time_dilation
    expected = k * (cp.quad_bound / cp.gain) * k ** (cp.n - 1) * tr.u
    assert np.allclose(st_.control, expected, rtol=1e-12, atol=1e-300)


def test_round_trip_sample(a2):
    cp, tr = a2["cp"], a2["trace"]
    p = cp.transform_params()
    cm = cp.coord_matrix()
    t = 10.0
    r, z, err, cell, v = to_scaled_sample(p, cm, tr, t)
    zd = cm.mat @ tr.x[tr.index_of(t) - tr.delay_steps]
    t2, x2, psi2, nu2, u2 = from_scaled_sample(p, cm, r, z, err, cell, v, zd)
    j = tr.index_of(t)
    assert t2 == pytest.approx(t, abs=1e-12)
    assert np.allclose(x2, tr.x[j], rtol=1e-12, atol=1e-18)
    assert np.allclose(psi2, tr.dec_estimate[j], rtol=1e-9, atol=1e-18)
    assert np.allclose(nu2, tr.dec_cell[j])
    assert u2 == pytest.approx(tr.u[j], rel=1e-12, abs=1e-300)


def test_transform_consistency_oracle(a2):
    """Centered differences of the transformed trace match the transformed flow."""
    cp, plant = a2["cp"], a2["plant"]
    st_ = a2["scaled"]
    p = cp.transform_params()
    cm = cp.coord_matrix()
    d = st_.delay_steps
    jumps = set(int(j) for j in st_.jump_indices())
    checked = 0
    scale = np.max(np.abs(st_.state))
    for j in range(st_.i_start + 1, st_.state.shape[0] - 1):
        if {j - 1, j, j + 1} & jumps:
            continue
        dz_fd = (st_.state[j + 1] - st_.state[j - 1]) / (2 * st_.h)
        de_fd = (st_.track_err[j + 1] - st_.track_err[j - 1]) / (2 * st_.h)
        dz, derr = scaled_rhs(
            p, cm, plant, st_.state[j], st_.state[j - d], st_.track_err[j], st_.control[j]
        )
        tol = 10.0 * st_.h**2 * max(scale, 1.0) + 1e-12
        assert np.max(np.abs(dz_fd - dz)) < tol
        assert np.max(np.abs(de_fd - derr)) < tol
        checked += 1
        if checked > 200:
            break
    assert checked > 50
