import numpy as np
import pytest

from ekfbound.errors import ConfigurationError, NumericalError
from ekfbound.filter import (
    GAMMA_FLOOR, FilterConfig, QcSpec, ekf_gain, initial_state, nominal_measurement_update,
    nominal_time_update, run_scenario, step,
)
from ekfbound.oracle import simulate_truth
from ekfbound.systems import linear_system, make_system, scalar_sine


def test_gain_examples():
    assert ekf_gain([[1.0]], [[2.0]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(2 / 3)
    assert ekf_gain([[1.0]], [[0.0]], [[1.0]])[0, 0] == 0.0
    assert ekf_gain([[0.0]], [[2.0]], [[1.0]])[0, 0] == 0.0
    with pytest.raises(NumericalError):
        ekf_gain([[0.0]], [[2.0]], [[0.0]])


def test_gain_matches_formula(rng):
    X = rng.standard_normal((3, 3))
    P = X @ X.T + np.eye(3)
    H = rng.standard_normal((2, 3))
    R = np.diag([0.3, 0.5])
    K = ekf_gain(H, P, R)
    assert np.allclose(K, P @ H.T @ np.linalg.inv(H @ P @ H.T + R), atol=1e-12)


def test_nominal_time_update():
    assert nominal_time_update([[0.9]], [[2.0]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(2.62)
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(nominal_time_update(np.eye(2), P, np.eye(2), np.zeros((2, 2))), P)
    Bw = np.array([[1.0], [0.5]])
    assert np.allclose(nominal_time_update(np.eye(2), np.zeros((2, 2)), Bw, [[0.2]]), 0.2 * Bw @ Bw.T)


def test_nominal_measurement_update():
    assert nominal_measurement_update([[2 / 3]], [[1.0]], [[2.0]])[0, 0] == pytest.approx(2 / 3)
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(nominal_measurement_update(np.zeros((2, 1)), [[1.0, 0.0]], P), P)
    assert np.allclose(nominal_measurement_update([[0.4], [0.1]], np.zeros((1, 2)), P), P)


def test_linear_one_step_collapses():
    sys_ = linear_system(A=[[0.9]], H=[[1.0]], Q=[[0.1]], R=[[0.2]])
    s1 = step(initial_state([0.0], [[1.0]]), sys_, None, [0.3])
    Pm = 0.81 + 0.1
    K = Pm / (Pm + 0.2)
    assert s1.prior_interval.L[0, 0] == pytest.approx(Pm, abs=1e-6)
    assert s1.prior_interval.U[0, 0] == pytest.approx(Pm, abs=1e-6)
    assert s1.interval.L[0, 0] == pytest.approx((1 - K) * Pm, abs=1e-6)
    assert s1.interval.U[0, 0] == pytest.approx((1 - K) * Pm, abs=1e-6)
    assert s1.x_hat[0] == pytest.approx(K * 0.3)


def test_nonlinear_one_step_contains_nominal():
    sys_ = scalar_sine(a=0.5, c=0.2)
    cfg = FilterConfig(dynamics_qc=QcSpec(box=[[-1.0, 1.0]]))
    s1 = step(initial_state([0.2], [[0.1]]), sys_, None, [0.1], cfg)
    assert s1.prior_interval.contains(s1.P_nominal_prior, tol=1e-8)
    assert s1.interval.contains(s1.P_nominal, tol=1e-8)
    assert s1.report.prior.gamma > 0
    assert s1.report.prior.qc_min_value >= -1e-12


def test_zero_noise_zero_uncertainty_stays_zero():
    sys_ = scalar_sine(a=0.5, c=0.2, Q=0.0, R=0.1)
    cfg = FilterConfig(dynamics_qc=QcSpec(box=[[-1.0, 1.0]]))
    s = initial_state([0.3], [[0.0]])
    for _ in range(3):
        s = step(s, sys_, None, [0.0], cfg)
        assert s.interval.L[0, 0] == pytest.approx(0.0, abs=1e-7)
        assert s.interval.U[0, 0] == pytest.approx(0.0, abs=1e-7)


def test_gamma_floor():
    spec = QcSpec(gamma=1e-12, box=[[-1.0, 1.0]])
    qc = spec.build(lambda t: 0 * t, 1, 1)
    assert qc.Lambda[0, 0] == pytest.approx(GAMMA_FLOOR ** 2)
    assert QcSpec(gamma=0.0, box=[[-1.0, 1.0]]).build(lambda t: 0 * t, 1, 1).Lambda[0, 0] == 0.0


def test_box_shape_mismatch():
    with pytest.raises(ConfigurationError):
        QcSpec(box=[[-1, 1], [-1, 1], [-1, 1]]).make_box(2)


def _linear_run(T=50):
    sys_ = make_system("linear")
    truth = simulate_truth(sys_, [1.0, 0.0], np.eye(2), None, T, 1, seed=3)
    return sys_, run_scenario(sys_, [1.0, 0.0], np.eye(2), None, truth.y[:, 0, :], T)


def test_linear_run_matches_kalman():
    sys_, run = _linear_run()
    A = np.array([[0.95, 0.1], [-0.05, 0.9]])
    H = np.array([[1.0, 0.0]])
    P = np.eye(2)
    for s in run.states[1:]:
        Pm = A @ P @ A.T + 0.01 * np.eye(2)
        K = Pm @ H.T / (H @ Pm @ H.T + 0.1)
        P = (np.eye(2) - K @ H) @ Pm @ (np.eye(2) - K @ H).T + 0.1 * K @ K.T
        for iv, ref in ((s.prior_interval, Pm), (s.interval, P)):
            assert np.allclose(iv.L, ref, atol=1e-6) and np.allclose(iv.U, ref, atol=1e-6)
    for r in run.records:
        assert r.lower <= r.upper
    assert len(run.records) == 3 + 50 * 6


def test_horizon_zero():
    sys_ = make_system("linear")
    with pytest.raises(ConfigurationError):
        run_scenario(sys_, [0.0, 0.0], np.eye(2), None, np.zeros((0, 1)), 0)


def test_too_few_measurements():
    sys_ = make_system("linear")
    with pytest.raises(ConfigurationError):
        run_scenario(sys_, [0.0, 0.0], np.eye(2), None, np.zeros((2, 1)), 5)


def test_replay_is_identical():
    a = _linear_run(10)[1].records
    b = _linear_run(10)[1].records
    assert a == b


def test_measurement_generator_and_threads():
    sys_ = scalar_sine(a=0.5, c=0.2)
    cfg = FilterConfig(dynamics_qc=QcSpec(box=[[-1.0, 1.0]]))
    ys = [0.1, -0.2, 0.05]
    seq = run_scenario(sys_, [0.0], [[0.1]], None, ys, 3, cfg)
    gen = run_scenario(sys_, [0.0], [[0.1]], None, lambda k: ys[k], 3, FilterConfig(
        dynamics_qc=cfg.dynamics_qc, threads=2))
    assert [(r.lower, r.upper) for r in seq.records] == [(r.lower, r.upper) for r in gen.records]


def test_continue_on_failure_records_gap():
    from ekfbound.sdp import SdpSettings
    from ekfbound.errors import BoundUnavailableError
    sys_ = scalar_sine(a=0.5, c=0.2)
    qc = QcSpec(box=[[-1.0, 1.0]])
    with pytest.raises(BoundUnavailableError) as ei:
        run_scenario(sys_, [0.0], [[0.1]], None, [0.1, 0.1], 2,
                     FilterConfig(dynamics_qc=qc, sdp=SdpSettings(max_iters=1)))
    assert ei.value.step == 1 and ei.value.phase == "prior"
    run = run_scenario(sys_, [0.0], [[0.1]], None, [0.1, 0.1], 2,
                       FilterConfig(dynamics_qc=qc, sdp=SdpSettings(max_iters=1), continue_on_failure=True))
    assert run.failures
    assert any(np.isinf(r.upper) for r in run.records)


def test_pendulum_with_input_runs():
    sys_ = make_system("pendulum")
    T = 5
    u = np.full((T, 1), 0.2)
    truth = simulate_truth(sys_, [0.3, 0.0], 0.01 * np.eye(2), u, T, 1, seed=0)
    cfg = FilterConfig(dynamics_qc=QcSpec(box=[[-0.5, 0.5]]))
    run = run_scenario(sys_, [0.3, 0.0], 0.01 * np.eye(2), u, truth.y[:, 0, :], T, cfg)
    for s in run.states[1:]:
        assert s.interval.contains(s.P_nominal, tol=1e-8)
        assert s.prior_interval.contains(s.P_nominal_prior, tol=1e-8)
