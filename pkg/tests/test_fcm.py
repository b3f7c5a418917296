import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcmloc.actuator import ActuatorParams
from fcmloc.dynamics import QuadParams, control_moments, default_aero_model
from fcmloc.errors import ConfigError, EstimationError, SingularEffectivenessError
from fcmloc.fcm import (EPSILON, FcmConfig, LinearizedModel, controllability_rank,
                        corrective_control, detect, difference_model,
                        effectiveness_from_aero, estimate_M, fcm_instant, fcmw, fcmw_trace,
                        model_error, rolling_M, update_B)
from fcmloc.ingest import FlightLog

ACT = ActuatorParams()
I3 = np.eye(3)


def cfg(**kw):
    # noise-free test logs are weakly excited; a low floor lets M move
    kw.setdefault("b_only", True)
    kw.setdefault("excitation_floor", 0.1)
    return FcmConfig(**kw)


def linear_log(B, n=1500, dt=1 / 500, seed=0, excite=40.0, effectiveness=None, fault_at=None):
    """Rates integrated exactly from xdot = B u with rotor speeds held per sample."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    w = 700 + excite * np.sin(2 * np.pi * np.outer(t, [1.3, 2.1, 2.9, 3.7]) + rng.uniform(0, 6, 4))
    u = control_moments(w)
    gain = np.ones(3) if effectiveness is None else np.asarray(effectiveness, float)
    x = np.zeros((n, 3))
    for k in range(n - 1):
        g = gain if (fault_at is not None and t[k] >= fault_at) else np.ones(3)
        x[k + 1] = x[k] + dt * (B * g) @ u[k]
    return FlightLog(t, x, w)


def _pred_pair(B):
    log = linear_log(B)
    xdot = np.diff(log.rates, axis=0) / log.dt
    u = control_moments(log.rotor_speeds)[:-1]
    return np.diff(xdot, axis=0), np.diff(u, axis=0) @ B.T


class TestDifferenceModel:
    def test_zero(self):
        assert np.allclose(difference_model(np.zeros(3), np.zeros(3), I3, I3), 0)

    def test_diagonal_b_only(self):
        assert np.allclose(difference_model(np.zeros(3), np.ones(3), np.zeros((3, 3)),
                                            np.diag([2, 3, 4])), [2, 3, 4])

    def test_identity_coupling(self):
        assert np.allclose(difference_model([1, 0, 0], np.zeros(3), I3, I3), [1, 0, 0])

    def test_b_only_model_has_zero_A(self):
        m = LinearizedModel(np.diag([2, 3, 4]), A=np.ones((3, 3)), b_only=True)
        assert np.all(m.A == 0)


class TestEstimateM:
    def _window(self, rng, n=50):
        du = rng.normal(size=(n, 3)) * 10
        return np.zeros((n, 3)), du, LinearizedModel(I3)

    def test_perfect_match(self, rng):
        dx, du, m = self._window(rng)
        assert np.allclose(estimate_M(du, dx, du, m, floor=0.0), 1)

    def test_gain_loss_is_invisible_to_correlation(self, rng):
        dx, du, m = self._window(rng)
        assert np.allclose(estimate_M(0.5 * du, dx, du, m, floor=0.0), 1)

    def test_regression_sees_gain_loss(self, rng):
        dx, du, m = self._window(rng)
        got = estimate_M(0.5 * du, dx, du, m, method="regression", floor=0.0)
        assert np.allclose(got, 0.5)

    def test_white_noise_is_uncorrelated(self):
        rng = np.random.default_rng(7)
        corr, ms = [], []
        for _ in range(400):
            dx, du, m = self._window(rng)
            noise = rng.normal(size=du.shape)
            c = [np.corrcoef(noise[:, i], du[:, i])[0, 1] for i in range(3)]
            corr.extend(np.abs(c))
            ms.extend(estimate_M(noise, dx, du, m, floor=0.0))
        ms = np.array(ms)
        assert np.mean(corr) < 0.2
        assert np.mean(ms) < 0.2 and ms.min() == EPSILON
        # anti-correlated windows clamp to the floor
        assert np.mean(ms == EPSILON) > 0.4

    def test_unexcited_holds_previous(self, rng):
        dx, du, m = self._window(rng)
        prev = np.array([0.3, 0.4, 0.5])
        assert np.allclose(estimate_M(du, dx, np.zeros_like(du), m, prev), prev)

    def test_short_window(self, rng):
        dx, du, m = self._window(rng, 5)
        with pytest.raises(EstimationError):
            estimate_M(du, dx, du, m)

    @given(arrays(float, (30, 3), elements=st.floats(-1e3, 1e3)),
           arrays(float, (30, 3), elements=st.floats(-1e3, 1e3)),
           st.sampled_from(["correlation", "regression"]))
    def test_range(self, meas, du, method):
        m = estimate_M(meas, np.zeros_like(du), du, LinearizedModel(I3), method=method, floor=0.0)
        assert np.all((m >= EPSILON) & (m <= 1))

    def test_noise_free_nominal_data(self):
        B = effectiveness_from_aero(QuadParams(), default_aero_model()).B
        raw = rolling_M(*_pred_pair(B), 100, floor=0.1, hold=False)
        # yaw effectiveness is small, so only roll and pitch clear the floor here
        assert np.isfinite(raw[:, :2]).mean() > 0.8 and np.nanmin(raw) >= 0.999
        res = detect(linear_log(B), LinearizedModel(B), cfg(), ACT)
        assert res.m_trace.min() >= 0.999


class TestUpdateB:
    def test_identity(self):
        B = np.diag([2.0, 3, 4])
        assert np.array_equal(update_B(B, I3), B)

    def test_diagonal(self):
        assert np.allclose(update_B(2 * I3, np.diag([0.5, 1, 1])), np.diag([1, 2, 2]))

    @given(st.integers(0, 60))
    def test_geometric_decay(self, k):
        B = 2 * I3
        for _ in range(k):
            B = update_B(B, [0.9, 1, 1])
        assert np.isclose(B[0, 0], 2 * 0.9**k, rtol=1e-12)


class TestErrorAndCorrection:
    def test_perfect_model(self, rng):
        B = np.diag(rng.uniform(1, 3, 3))
        du = rng.normal(size=3)
        assert np.allclose(model_error(B @ du, np.zeros(3), du, np.zeros((3, 3)), B), 0)

    def test_no_response(self):
        e = model_error(np.zeros(3), np.zeros(3), [1, 0, 0], np.zeros((3, 3)), I3)
        assert np.allclose(e, [-1, 0, 0])

    def test_halved_channel(self):
        actual = np.diag([0.5, 1, 1]) @ np.array([2.0, 0, 0])
        e = model_error(actual, np.zeros(3), [2, 0, 0], np.zeros((3, 3)), I3)
        assert np.allclose(e, [-1, 0, 0])

    def test_corrective_examples(self):
        assert np.allclose(corrective_control(np.diag([2, 4, 5]), np.zeros(3)), 0)
        assert np.allclose(corrective_control(np.diag([2, 4, 5]), [2, 4, 5]), [1, 1, 1])
        assert np.allclose(corrective_control(np.diag([0.5, 1, 1]), [1, 0, 0]), [2, 0, 0])

    def test_singular(self):
        with pytest.raises(SingularEffectivenessError):
            corrective_control(np.diag([1, 0, 1]), np.ones(3))


class TestRank:
    def test_examples(self):
        assert controllability_rank(np.zeros((3, 3)), I3) == 3
        assert controllability_rank(np.zeros((3, 3)), np.zeros((3, 3))) == 0
        assert controllability_rank(np.array([[0, 1], [0, 0.0]]), np.array([[0], [1.0]])) == 2

    def test_stacked(self):
        A = np.zeros((4, 3, 3))
        B = np.stack([I3, np.diag([1, 0, 1]), np.zeros((3, 3)), I3])
        assert list(controllability_rank(A, B)) == [3, 2, 0, 3]


class TestVoting:
    def test_instant_examples(self):
        assert fcm_instant([10] * 3, [1, 1, 1], 3, 3) == 1
        assert fcm_instant([10] * 3, [11, 0, 0], 3, 3) == 0
        assert fcm_instant([10] * 3, [-11, 0, 0], 3, 3) == 0
        assert fcm_instant([10] * 3, [0, 0, 0], 2, 3) == 0

    def test_window_examples(self):
        assert fcmw([1] * 5) == 1 and fcmw([0] * 5) == 0
        assert fcmw([1, 1, 1, 0, 0]) == 1
        assert fcmw([1, 1, 0, 0]) == 1  # a tie stays in control

    @given(st.integers(1, 400), st.integers(50, 600), st.integers(1, 200))
    def test_step_delay_bound(self, n_w, step, extra):
        dt = 0.004
        trace = np.r_[np.ones(step), np.zeros(n_w + extra)].astype(int)
        out = fcmw_trace(trace, n_w)
        k = np.flatnonzero(out == 0)
        assert len(k)
        assert k[0] >= step
        assert (k[0] - step) * dt <= n_w * dt + dt

    @given(st.integers(1, 200), st.integers(1, 200), st.integers(10, 300))
    def test_longer_window_never_earlier(self, a, b, step):
        trace = np.r_[np.ones(step), np.zeros(500)].astype(int)
        lo, hi = sorted((a, b))
        first = lambda n: np.flatnonzero(fcmw_trace(trace, n) == 0)[0]  # noqa: E731
        assert first(hi) >= first(lo)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.integers(1, 30))
    def test_trace_matches_window_vote(self, bits, n):
        trace = np.array(bits)
        out = fcmw_trace(trace, n)
        for k in range(n - 1, len(trace)):
            assert out[k] == fcmw(trace[k - n + 1:k + 1])


class TestRollingM:
    def test_hold_and_raw(self, rng):
        pred = rng.normal(size=(200, 3)) * 10
        pred[100:] = 0.0
        held = rolling_M(pred, pred, 20, floor=1.0)
        raw = rolling_M(pred, pred, 20, floor=1.0, hold=False)
        assert np.all(np.isnan(raw[:19])) and np.all(np.isnan(raw[120:]))
        assert np.allclose(held[120:], 1.0) and np.allclose(held[:19], 1.0)


class TestDetect:
    B = effectiveness_from_aero(QuadParams(), default_aero_model()).B

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FcmConfig(mvw=0.001, dt=0.004)
        with pytest.raises(ConfigError):
            FcmConfig(threshold=0.6)
        with pytest.raises(ConfigError):
            FcmConfig(m_method="rls")

    def test_constant_hover_no_detection(self):
        n = 1000
        log = FlightLog(np.arange(n) / 500, np.zeros((n, 3)), np.full((n, 4), 700.0))
        res = detect(log, LinearizedModel(self.B), cfg(cf=30.0), ACT)
        assert res.detection_time is None and np.all(res.fcm == 1)

    def test_exact_model_no_detection(self):
        res = detect(linear_log(self.B), LinearizedModel(self.B), cfg(), ACT)
        assert res.detection_time is None
        assert set(np.unique(res.fcm)) <= {0, 1} and set(np.unique(res.fcmw)) <= {0, 1}

    def test_effectiveness_loss_is_detected(self):
        log = linear_log(self.B, n=2500, effectiveness=[-1.0, 1.0, 1.0], fault_at=2.0)
        res = detect(log, LinearizedModel(self.B), cfg(), ACT)
        assert res.detection_time is not None and res.detection_time > 2.0
        assert res.first_fcm_zero <= res.detection_time

    def test_b_only_equivalence(self):
        log = linear_log(self.B, n=2500, effectiveness=[-1.0, 1.0, 1.0], fault_at=2.0)
        config = cfg(cf=30.0, b_only=False)
        full = detect(log, LinearizedModel(self.B, np.zeros((3, 3)), b_only=False), config, ACT)
        bonly = detect(log, LinearizedModel(self.B, b_only=True), config, ACT)
        assert full.detection_time == bonly.detection_time
        for name in ("fcm", "fcmw", "m_trace", "rank_trace"):
            assert np.array_equal(getattr(full, name), getattr(bonly, name))

    def test_mvw_of_one_sample_matches_fcm(self):
        log = linear_log(self.B, n=2500, effectiveness=[-1.0, 1.0, 1.0], fault_at=2.0)
        res = detect(log, LinearizedModel(self.B), cfg(mvw=log.dt), ACT)
        after = slice(res.warmup_index, None)
        assert np.array_equal(res.fcmw[after], res.fcm[after])

    def test_serialisation(self):
        res = detect(linear_log(self.B), LinearizedModel(self.B), cfg(), ACT)
        d = res.to_dict({"mvw": 0.2}, downsample=10)
        assert set(d) >= {"config", "detection_time_s", "fcm", "fcmw", "m_trace", "rank_trace"}
        assert len(d["fcm"]) == len(res.fcm[::10])
