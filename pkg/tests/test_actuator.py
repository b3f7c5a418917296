import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcmloc.actuator import (ActuatorParams, FaultEvent, RotorSet, actuator_step, inject_fault,
                             max_moment_change)
from fcmloc.dynamics import moment_mixing
from fcmloc.errors import ConfigError

ACT = ActuatorParams()
inside = arrays(float, 4, elements=st.floats(101, 1299))
dirs = arrays(float, 3, elements=st.floats(-1, 1))


def test_param_validation():
    with pytest.raises(ConfigError):
        ActuatorParams(time_constant=0)
    with pytest.raises(ConfigError):
        ActuatorParams(omega_min=500, omega_max=400)
    with pytest.raises(ConfigError):
        FaultEvent(5, 0.0, 1.0)
    with pytest.raises(ConfigError):
        FaultEvent(1, 0.0, -1.0)


class TestStep:
    def test_fixed_point(self):
        r = RotorSet.at(700)
        assert np.allclose(actuator_step(r, np.full(4, 700), ACT, 0.004).speeds, 700)

    def test_first_order_update(self):
        act = ActuatorParams(omega_min=0)
        r = actuator_step(RotorSet(np.zeros(4)), np.full(4, 600), act, 1 / 250)
        assert np.allclose(r.speeds, 144)

    def test_failed_rotor_stays_at_zero(self):
        r = RotorSet(np.full(4, 700.0), caps=np.array([1, 1, 0, 1.0]))
        r = actuator_step(r, np.full(4, 1300), ACT, 0.004)
        assert r.speeds[2] == 0

    @given(st.floats(100, 1300), st.floats(100, 1300), st.floats(1e-4, 0.015))
    def test_monotone_convergence(self, w0, cmd, dt):
        r = RotorSet(np.full(4, w0))
        prev = abs(w0 - cmd)
        for _ in range(50):
            r = actuator_step(r, np.full(4, cmd), ACT, dt)
            gap = abs(r.speeds[0] - cmd)
            assert gap <= prev + 1e-9
            # no overshoot past the command
            assert (r.speeds[0] - cmd) * (w0 - cmd) >= -1e-9
            prev = gap

    @given(inside, st.floats(-3000, 3000))
    def test_within_limits(self, w, cmd):
        r = actuator_step(RotorSet(w), np.full(4, cmd), ACT, 0.004)
        assert np.all((r.speeds >= ACT.omega_min) & (r.speeds <= ACT.omega_max))


class TestFaults:
    sched = (FaultEvent(3, 0.0, 5.2),)

    def test_empty_schedule(self):
        r = RotorSet.at(700)
        assert inject_fault((), 10.0, r) is r

    def test_before_activation(self):
        r = inject_fault(self.sched, 5.0, RotorSet.at(700))
        assert np.allclose(r.speeds, 700) and np.allclose(r.caps, 1)

    def test_after_activation(self):
        r = inject_fault(self.sched, 5.3, RotorSet.at(700))
        assert r.speeds[2] == 0 and np.allclose(r.speeds[[0, 1, 3]], 700)

    def test_duplicate_last_wins(self, caplog):
        sched = (FaultEvent(2, 0.5, 1.0), FaultEvent(2, 0.2, 2.0))
        r = inject_fault(sched, 3.0, RotorSet.at(700))
        assert np.isclose(r.caps[1], 0.2) and "duplicate" in caplog.text


class TestHeadroom:
    def test_no_room_in_needed_direction(self):
        # +u_p needs rotors 1, 4 up and 2, 3 down
        w = np.array([1300, 100, 100, 1300.0])
        assert max_moment_change(w, [1, 1, 1], ACT, 0.004)[0] == 0

    def test_full_room_on_every_rotor(self):
        act = ActuatorParams(omega_min=0, omega_max=1000)
        w = np.array([0, 1000, 1000, 0.0])
        got = max_moment_change(w, [1, 0, 0], act, 1 / 250)[0]
        assert np.isclose(got, (1 / 250) * 60 * 4000)

    def test_symmetric_midpoint(self):
        w = np.full(4, (ACT.omega_min + ACT.omega_max) / 2)
        a = max_moment_change(w, [1, 1, 1], ACT, 0.004)
        b = max_moment_change(w, [-1, -1, -1], ACT, 0.004)
        assert np.allclose(a, b)

    @given(inside, dirs, st.floats(1e-4, 0.02))
    def test_nonnegative_and_linear_in_dt(self, w, d, dt):
        a = max_moment_change(w, d, ACT, dt)
        b = max_moment_change(w, d, ACT, 2 * dt)
        assert np.all(a > 0)
        assert np.allclose(b, 2 * a)

    @given(arrays(float, 4, elements=st.floats(0, 1500)), dirs)
    def test_additive_over_rotors(self, w, d):
        got = max_moment_change(w, d, ACT, 0.004)
        G = moment_mixing(ACT.spin_sign)
        k = 0.004 / ACT.time_constant
        for axis in range(3):
            s = -1 if d[axis] < 0 else 1
            total = 0.0
            for i in range(4):
                room = (ACT.omega_max - w[i]) if G[axis, i] * s > 0 else (w[i] - ACT.omega_min)
                total += k * max(room, 0.0)
            assert np.isclose(got[axis], total)

    def test_vectorised(self, rng):
        w = rng.uniform(100, 1300, (20, 4))
        d = rng.normal(size=(20, 3))
        stacked = max_moment_change(w, d, ACT, 0.004)
        for i in range(20):
            assert np.allclose(stacked[i], max_moment_change(w[i], d[i], ACT, 0.004))
