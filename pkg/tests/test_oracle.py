import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ekfbound.bounds import CovarianceInterval
from ekfbound.errors import HorizonMismatchError, InsufficientSamplesError
from ekfbound.filter import FilterConfig, QcSpec, run_scenario
from ekfbound.oracle import (
    bootstrap_standard_error, bound_violation_report, empirical_covariance, empirical_second_moment,
    run_ensemble, run_frozen_ensemble, simulate_truth,
)
from ekfbound.systems import make_system, scalar_sine


def test_plus_minus_one():
    assert empirical_covariance(np.array([[1.0], [-1.0]]))[0, 0] == pytest.approx(2.0)


def test_identical_samples():
    assert np.all(empirical_covariance(np.full((50, 2), 3.7)) == 0.0)


def test_too_few_samples():
    with pytest.raises(InsufficientSamplesError):
        empirical_covariance(np.zeros((1, 2)))
    with pytest.raises(InsufficientSamplesError):
        bootstrap_standard_error(np.zeros((1, 1)))


def test_independent_offdiagonal_small():
    E = np.random.default_rng(0).standard_normal((100_000, 2))
    assert abs(empirical_covariance(E)[0, 1]) <= 0.02


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_clt_convergence(n):
    N = 50_000
    E = np.random.default_rng(n).standard_normal((N, n))
    assert np.linalg.norm(empirical_covariance(E) - np.eye(n)) <= 5 * np.sqrt(n / N)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 3), st.integers(0, 1000))
def test_covariance_matches_numpy(N, n, seed):
    E = np.random.default_rng(seed).standard_normal((N, n))
    C = empirical_covariance(E)
    assert np.allclose(C, np.atleast_2d(np.cov(E, rowvar=False)), atol=1e-12)
    assert np.allclose(C, C.T)
    assert np.allclose(empirical_second_moment(E), E.T @ E / N, atol=1e-12)


def test_bootstrap_se_scales_like_sqrt_n():
    rng = np.random.default_rng(1)
    se1 = bootstrap_standard_error(rng.standard_normal((2_000, 1)), seed=0)[0, 0]
    se2 = bootstrap_standard_error(rng.standard_normal((8_000, 1)), seed=0)[0, 0]
    # var(s²) = 2/N for unit normals
    assert se1 == pytest.approx(np.sqrt(2 / 2_000), rel=0.25)
    assert se1 / se2 == pytest.approx(2.0, rel=0.3)


def test_zero_noise_identical_trajectories():
    sys_ = scalar_sine(Q=0.0, R=0.0)
    tr = simulate_truth(sys_, [0.4], [[0.0]], None, 5, 20, seed=1)
    assert np.all(tr.x == tr.x[:, :1, :])
    assert np.all(tr.y == tr.y[:, :1, :])


def test_seed_determinism():
    sys_ = scalar_sine()
    a = run_ensemble(sys_, [0.0], [[0.1]], None, 5, 500, seed=9)
    b = run_ensemble(sys_, [0.0], [[0.1]], None, 5, 500, seed=9)
    c = run_ensemble(sys_, [0.0], [[0.1]], None, 5, 500, seed=10)
    assert np.array_equal(a.posterior_errors, b.posterior_errors)
    assert np.array_equal(a.prior_errors, b.prior_errors)
    assert not np.array_equal(a.posterior_errors, c.posterior_errors)


def test_single_trajectory_cannot_give_covariance():
    sys_ = scalar_sine()
    with pytest.raises(InsufficientSamplesError):
        run_ensemble(sys_, [0.0], [[0.1]], None, 3, 1, seed=0)


def _linear_setup(T, N, seed=4):
    sys_ = make_system("linear")
    truth = simulate_truth(sys_, [1.0, 0.0], np.eye(2), None, T, 1, seed=seed)
    run = run_scenario(sys_, [1.0, 0.0], np.eye(2), None, truth.y[:, 0, :], T)
    ens = run_ensemble(sys_, [1.0, 0.0], np.eye(2), None, T, N, seed=seed + 1)
    return run, ens


def test_linear_large_n_within_five_percent():
    run, ens = _linear_setup(10, 100_000)
    for s in run.states[1:]:
        emp = ens.covariance(s.k, "posterior")
        d = np.arange(2)
        assert np.allclose(emp[d, d], s.P_nominal[d, d], rtol=0.05)


def test_linear_no_violations_and_halved_u_flagged():
    run, ens = _linear_setup(10, 100_000)
    ivs = run.intervals("posterior") + run.intervals("prior")
    rep = bound_violation_report(ivs, ens, 3.0)
    assert rep.violation_rate == 0.0
    assert rep.pairs_checked == 3 * len(ivs)
    halved = [CovarianceInterval(np.minimum(iv.L, 0.5 * iv.U), 0.5 * iv.U, iv.k, iv.phase)
              for iv in run.intervals("posterior")[1:]]
    bad = bound_violation_report(halved, ens, 3.0)
    assert len(bad.violations) > 0
    assert bad.to_dict()["violations"] == len(bad.violations)


def test_zero_noise_interval_zero():
    sys_ = scalar_sine(Q=0.0, R=0.1)
    cfg = FilterConfig(dynamics_qc=QcSpec(box=[[-1.0, 1.0]]))
    run = run_scenario(sys_, [0.3], [[0.0]], None, np.zeros(4), 4, cfg)
    ens = run_ensemble(sys_, [0.3], [[0.0]], None, 4, 100, seed=0)
    for s in run.states[1:]:
        assert np.all(ens.errors(s.k, "prior") == 0.0)
    rep = bound_violation_report(run.intervals("prior"), ens, 3.0)
    assert rep.violation_rate == 0.0


def test_horizon_mismatch():
    run, ens = _linear_setup(3, 200)
    with pytest.raises(HorizonMismatchError):
        bound_violation_report([CovarianceInterval.point(np.eye(2), k=9, phase="posterior")], ens)
    with pytest.raises(HorizonMismatchError):
        bound_violation_report([CovarianceInterval.point(np.eye(3), k=1, phase="posterior")], ens)


def test_frozen_mode_matches_ekf_mode_for_linear():
    sys_ = make_system("linear")
    truth = simulate_truth(sys_, [1.0, 0.0], np.eye(2), None, 5, 1, seed=4)
    run = run_scenario(sys_, [1.0, 0.0], np.eye(2), None, truth.y[:, 0, :], 5)
    fr = run_frozen_ensemble(sys_, run, np.eye(2), None, 40_000, seed=2)
    for s in run.states[1:]:
        assert np.allclose(fr.covariance(s.k, "posterior"), s.P_nominal, rtol=0.05, atol=1e-3)
