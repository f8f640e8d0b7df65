import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ekfbound.errors import ConfigurationError, InvalidParameterError, RequiresBoundedSetError
from ekfbound.qc import lift_qc, local_gain_estimate, norm_bound_qc, sector_bound_qc, validate_qc
from ekfbound.systems import Box, CATALOG, decompose_dynamics, make_system


def test_norm_bound_lambda():
    assert np.array_equal(norm_bound_qc(1.0).Lambda, [[1, 0], [0, -1]])
    assert np.array_equal(norm_bound_qc(2.0).Lambda, [[4, 0], [0, -1]])
    assert np.allclose(norm_bound_qc(0.5, input_dim=2, output_dim=1).Lambda, np.diag([0.25, 0.25, -1]))


@pytest.mark.parametrize("g", [0.0, -1.0])
def test_norm_bound_rejects_nonpositive(g):
    with pytest.raises(InvalidParameterError):
        norm_bound_qc(g)


def test_sector_symmetric_equals_norm():
    assert np.allclose(sector_bound_qc(-1.0, 1.0).Lambda, norm_bound_qc(1.0).Lambda)


def test_sector_form_value():
    # (d - αb)(βb - d) with α=0, β=1, b=2, d=1 is 1·1 = 1 under the unscaled Λ
    qc = sector_bound_qc(0.0, 1.0)
    assert qc.form(np.array([2.0]), np.array([1.0])) == pytest.approx(1.0, abs=1e-15)


def test_sector_collapsed_is_boundary():
    c = 0.7
    qc = sector_bound_qc(c, c)
    for b in (-2.0, 0.3, 5.0):
        assert qc.form(np.array([b]), np.array([c * b])) == pytest.approx(0.0, abs=1e-14)


def test_sector_order():
    with pytest.raises(InvalidParameterError):
        sector_bound_qc(1.0, 0.0)


def test_local_gain_sine():
    g = local_gain_estimate(lambda t: 0.2 * (np.sin(t) - t), Box.symmetric(1.0))
    assert g == pytest.approx(1.05 * 0.2 * (1 - np.sin(1.0)), rel=1e-9)
    assert g == pytest.approx(0.0333, abs=1e-4)


def test_local_gain_zero_and_square():
    assert local_gain_estimate(lambda t: 0.0 * t, Box.symmetric(1.0)) == 0.0
    assert local_gain_estimate(lambda t: t ** 2, Box.symmetric(1.0)) == pytest.approx(1.05)


def test_local_gain_needs_bounded_box():
    with pytest.raises(RequiresBoundedSetError):
        local_gain_estimate(np.sin, Box.unbounded(1))
    with pytest.raises(InvalidParameterError):
        local_gain_estimate(np.sin, Box.symmetric(1.0), grid_density=5)


def test_lift_examples():
    qc = norm_bound_qc(2.0)
    assert np.allclose(lift_qc(qc, [[1.0]]).M, [[4, 0], [0, -1]])
    assert np.allclose(lift_qc(qc, [[3.0]]).M, [[36, 0], [0, -1]])
    assert np.allclose(lift_qc(norm_bound_qc(1.0), [[1.0, 0.0]]).M, np.diag([1, 0, -1]))
    with pytest.raises(ConfigurationError):
        lift_qc(qc, np.eye(2))


def test_validate_examples():
    box = Box.symmetric(5.0)
    assert validate_qc(norm_bound_qc(1.0, box=box), np.sin).min_value >= 0
    rep = validate_qc(norm_bound_qc(0.1, box=box), np.sin)
    assert not rep.passed
    # the worst sample sits where sin θ / θ is largest, i.e. near 0
    assert abs(rep.worst_input[0]) < 2.0
    assert validate_qc(sector_bound_qc(-0.5, 2.0, box=box), lambda t: 0.0 * t).min_value >= 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.0, 1.0))
def test_gain_monotone_in_box(hw, extra):
    Delta = lambda t: 0.3 * (np.sin(t) - t)
    g1 = local_gain_estimate(Delta, Box.symmetric(hw))
    g2 = local_gain_estimate(Delta, Box.symmetric(hw + extra))
    assert g2 >= g1 - 1e-15


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 2.0), st.integers(0, 10_000))
def test_lifted_form_matches_source(hw, seed):
    rng = np.random.default_rng(seed)
    box = Box.symmetric(hw)
    Delta = lambda t: 0.2 * (np.sin(t) - t)
    qc = norm_bound_qc(local_gain_estimate(Delta, box), box=box)
    assert validate_qc(qc, Delta, 500, seed).passed
    C = np.array([[1.0, 0.0]])
    lifted = lift_qc(qc, C)
    for _ in range(20):
        dx = rng.uniform(-hw, hw, 2)
        b = C @ dx
        p = Delta(b)
        v = np.concatenate([dx, p])
        assert v @ lifted.M @ v == pytest.approx(qc.form(b, p), abs=1e-12)
        assert v @ lifted.M @ v >= -1e-12


@pytest.mark.parametrize("sid", ["scalar_sine", "scalar_cubic", "pendulum", "van_der_pol"])
def test_auto_gain_valid_for_catalog(sid):
    sys_ = make_system(sid)
    x0 = np.zeros(sys_.state_dim) + 0.2
    d = decompose_dynamics(sys_, x0)
    box = Box.symmetric(0.5, d.C.shape[0])
    g = local_gain_estimate(d.Delta, box, grid_density=41)
    qc = norm_bound_qc(g, d.C.shape[0], d.n_p, box=box, allow_zero=True)
    assert validate_qc(qc, d.Delta, 1000, 0).passed
