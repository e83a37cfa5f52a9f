import numpy as np
import pytest

from mpnav import quat
from mpnav.ins import GRAVITY, NavState, drift_profile, mechanize_step
from mpnav.scene import trajectory_poses
from mpnav.synth import ImuErrorModel, ImuSample, synth_imu

ZERO_ERR = ImuErrorModel(
    gyro_bias_std=0.0, accel_bias_std=0.0, gyro_noise_density=0.0, accel_noise_density=0.0
)

STATIONARY = ImuSample(t=0.0, gyro=np.zeros(3), accel=np.array([0.0, 0.0, 9.80665]))


def circle_spec(speed=8.0, radius=100.0):
    return {
        "kind": "circle",
        "center_en_m": [0.0, 0.0],
        "radius_m": radius,
        "speed_mps": speed,
        "z_m": 1.5,
    }


def test_equilibrium_state_unchanged():
    s = NavState()
    for _ in range(200):
        s = mechanize_step(s, STATIONARY, 0.01)
    assert np.allclose(s.p, 0.0, atol=1e-12)
    assert np.allclose(s.v, 0.0, atol=1e-12)
    assert np.allclose(s.q_bn, quat.identity(), atol=1e-12)


def test_pure_yaw_rate_closed_form():
    omega = 0.3
    s = NavState()
    sample = ImuSample(t=0.0, gyro=np.array([0.0, 0.0, omega]), accel=np.array([0.0, 0.0, 9.80665]))
    n, dt = 600, 0.01
    for _ in range(n):
        s = mechanize_step(s, sample, dt)
    yaw = quat.to_euler(s.q_bn)[2]
    assert yaw == pytest.approx(omega * n * dt, abs=1e-9)
    # body z stays up, so the gravity-compensating accel keeps p, v fixed
    assert np.allclose(s.v, 0.0, atol=1e-9)
    assert np.allclose(s.p, 0.0, atol=1e-9)


def test_zero_dt_limit_and_bounds():
    s = NavState(p=[1.0, 2.0, 3.0], v=[0.5, 0.0, 0.0])
    out = mechanize_step(s, STATIONARY, 1e-9)
    assert np.allclose(out.p - s.p, s.v * 1e-9, atol=1e-15)
    assert np.allclose(out.v, s.v, atol=1e-12)
    assert np.allclose(out.q_bn, s.q_bn, atol=1e-12)
    with pytest.raises(ValueError):
        mechanize_step(s, STATIONARY, 0.0)
    with pytest.raises(ValueError):
        mechanize_step(s, STATIONARY, 0.2)
    with pytest.raises(ValueError):
        mechanize_step(s, ImuSample(t=0.0, gyro=np.array([np.nan, 0, 0]), accel=np.zeros(3)), 0.01)


def test_quaternion_norm_preserved():
    rng = np.random.default_rng(0)
    s = NavState()
    for _ in range(500):
        sample = ImuSample(t=0.0, gyro=rng.uniform(-1, 1, 3), accel=rng.uniform(-12, 12, 3))
        s = mechanize_step(s, sample, 0.01)
        assert abs(np.linalg.norm(s.q_bn) - 1.0) <= 1e-9


def test_uncompensated_gyro_bias_drift():
    bias = 0.01
    # yaw-axis bias: closed-form heading drift, and no position error at all
    # because body z stays up and gravity still cancels
    s = NavState()
    sample = ImuSample(t=0.0, gyro=np.array([0.0, 0.0, bias]), accel=np.array([0.0, 0.0, 9.80665]))
    for _ in range(6000):
        s = mechanize_step(s, sample, 0.01)
    assert quat.to_euler(s.q_bn)[2] == pytest.approx(0.6, abs=1e-6)
    assert np.linalg.norm(s.p) < 1e-9
    # roll-axis bias tilts the believed attitude, so the gravity compensation
    # leaks into velocity and position error grows superlinearly (~t^3)
    s = NavState()
    sample = ImuSample(t=0.0, gyro=np.array([bias, 0.0, 0.0]), accel=np.array([0.0, 0.0, 9.80665]))
    errs = {}
    for k in range(6000):
        s = mechanize_step(s, sample, 0.01)
        if k + 1 in (3000, 6000):
            errs[(k + 1) * 0.01] = np.linalg.norm(s.p)
    assert errs[60.0] > 4.0 * errs[30.0]
    assert errs[60.0] == pytest.approx(9.80665 * bias * 60.0**3 / 6.0, rel=0.05)


def test_round_trip_noiseless_imu():
    rate = 100.0
    times = np.arange(0.0, 60.0 + 0.5 / rate, 1.0 / rate)
    poses = trajectory_poses(circle_spec(), times)
    samples = synth_imu(poses, ZERO_ERR, rate, np.random.default_rng(1))
    s = NavState(p=poses[0].p, v=poses[0].v, q_bn=quat.from_euler(*poses[0].att))
    worst = 0.0
    for k, sample in enumerate(samples):
        s = mechanize_step(s, sample, times[k + 1] - times[k])
        worst = max(worst, float(np.linalg.norm(s.p - poses[k + 1].p)))
    assert worst < 0.01


def test_round_trip_known_biases_compensated():
    # biased stream mechanized with the true biases in the state: still exact
    rate = 100.0
    times = np.arange(0.0, 20.0 + 0.5 / rate, 1.0 / rate)
    poses = trajectory_poses(circle_spec(), times)
    b_g = np.array([1e-3, -2e-3, 3e-3])
    b_a = np.array([0.01, 0.02, -0.01])
    samples = synth_imu(poses, ZERO_ERR, rate, np.random.default_rng(2), biases=(b_g, b_a))
    s = NavState(p=poses[0].p, v=poses[0].v, q_bn=quat.from_euler(*poses[0].att), b_g=b_g, b_a=b_a)
    for k, sample in enumerate(samples):
        s = mechanize_step(s, sample, times[k + 1] - times[k])
    assert np.linalg.norm(s.p - poses[-1].p) < 0.01


def test_drift_profile_zero_error_and_determinism():
    rate = 50.0
    times = np.arange(0.0, 30.0 + 0.5 / rate, 1.0 / rate)
    poses = trajectory_poses(circle_spec(), times)
    t, err = drift_profile(poses, ZERO_ERR, rate, np.random.default_rng(3))
    assert t.shape == err.shape == times.shape
    assert err[0] == 0.0
    assert np.max(err) < 0.01
    noisy = ImuErrorModel()
    t1, e1 = drift_profile(poses, noisy, rate, np.random.default_rng(4))
    t2, e2 = drift_profile(poses, noisy, rate, np.random.default_rng(4))
    assert np.array_equal(e1, e2)
    t3, e3 = drift_profile(poses, noisy, rate, np.random.default_rng(5))
    assert not np.array_equal(e1, e3)


def test_drift_profile_grows_with_biases():
    rate = 50.0
    times = np.arange(0.0, 60.0 + 0.5 / rate, 1.0 / rate)
    poses = trajectory_poses(circle_spec(), times)
    err_model = ImuErrorModel(bias_mode="fixed_magnitude")
    finals, early = [], []
    for seed in range(8):
        t, err = drift_profile(poses, err_model, rate, np.random.default_rng(seed))
        early.append(np.interp(12.0, t, err))
        finals.append(err[-1])
    assert np.median(finals) > 5.0 * np.median(early)
