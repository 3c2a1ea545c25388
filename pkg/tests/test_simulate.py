"""Simulator tests: RK4 against closed-form flows and a Richardson
order check, the PID/takeoff reference laws at pinned points, and
rollout bookkeeping (truncation, clamping, CSV shape and determinism).
"""

import math

import numpy as np
import pytest

from cbfsynth import constraints as C
from cbfsynth import dynamics as D
from cbfsynth import hjloss as HJ
from cbfsynth import network as N
from cbfsynth import simulate as SIM
from cbfsynth.errors import ConfigError, DomainError

# ---------------------------------------------------------------------------
# rk4
# ---------------------------------------------------------------------------


def test_rk4_di_zero_input_linear_flow():
    sys = D.double_integrator()
    out = SIM.rk4_step(sys, [0.0, 1.0], [0.0], 0.1)
    np.testing.assert_array_equal(out, [0.1, 1.0])


def test_rk4_di_unit_input_closed_form():
    sys = D.double_integrator()
    out = SIM.rk4_step(sys, [0.0, 0.0], [1.0], 0.1)
    # x = u t^2 / 2, v = u t; polynomial flow of degree <= 2 is exact
    np.testing.assert_allclose(out, [0.005, 0.1], rtol=0, atol=1e-18)


def test_rk4_di_exact_for_any_step_and_input():
    sys = D.double_integrator()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0, v0 = rng.uniform(-1, 1, size=2)
        u = rng.uniform(-1, 1)
        dt = rng.uniform(0.01, 0.5)
        out = SIM.rk4_step(sys, [x0, v0], [u], dt)
        want = [x0 + v0 * dt + 0.5 * u * dt * dt, v0 + u * dt]
        np.testing.assert_allclose(out, want, rtol=1e-14, atol=1e-16)


def test_rk4_plane_richardson_order():
    sys = D.dubins_plane()
    x = np.array([0.0, 1.0, 2.0, 0.4, 0.3, np.pi / 3, 1.2])
    u = np.array([0.5, 0.2, -0.3])

    def local_err(dt):
        one = SIM.rk4_step(sys, x, u, dt)
        half = SIM.rk4_step(sys, SIM.rk4_step(sys, x, u, dt / 2), u, dt / 2)
        return float(np.linalg.norm(one - half))

    ratio = local_err(0.08) / local_err(0.04)
    assert 24.0 <= ratio <= 40.0  # O(dt^5) local error halves ~2^5


def test_rk4_validates_dt_and_finiteness():
    sys = D.double_integrator()
    with pytest.raises(ConfigError):
        SIM.rk4_step(sys, [0.0, 0.0], [0.0], 0.0)
    with pytest.raises(DomainError, match="non-finite"):
        SIM.rk4_step(sys, [0.0, np.inf], [0.0], 0.1)


# ---------------------------------------------------------------------------
# references
# ---------------------------------------------------------------------------


def test_pid_zero_error_zero_output():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(5.0, 0.0), dt=0.01)
    u = pid(np.array([5.0, 0.0]), 0.0, np.zeros(1))
    np.testing.assert_array_equal(u, [0.0])


def test_pid_gain_arithmetic_first_call():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(0.0, 0.0), dt=0.01)
    # e = (2, 1); integral 0; edot = (v, u_prev) = (1, 0.5)
    u = pid(np.array([2.0, 1.0]), 0.0, np.array([0.5]))
    want = -1.2 * 2.0 - 2.0 * 1.0 + 0.1 * 1.0 + 0.1 * 0.5
    assert u[0] == pytest.approx(max(want, -1.0), abs=1e-15)  # clamped at -1


def test_pid_integral_trapezoid_accumulation():
    sys = D.double_integrator()
    gains = SIM.PidGains(
        k_p=[[0.0, 0.0]], k_i=[[1.0, 0.0]], k_d=[[0.0, 0.0]], target=[0.0, 0.0]
    )
    pid = SIM.PidController(sys, gains, dt=0.5)
    xs = [np.array([1.0, 0.0]), np.array([3.0, 0.0]), np.array([5.0, 0.0])]
    us = [pid(x, k * 0.5, np.zeros(1))[0] for k, x in enumerate(xs)]
    # integral after calls: 0, 0.5*(1+3)/2 = 1, 1 + 0.5*(3+5)/2 = 3
    assert us[0] == 0.0
    assert us[1] == pytest.approx(1.0, abs=1e-15)
    assert us[2] == pytest.approx(1.0, abs=0)  # clamped at the box
    pid.reset()
    assert pid(xs[0], 0.0, np.zeros(1))[0] == 0.0


def test_pid_output_clamped_to_box():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(0.0), dt=0.01)
    u = pid(np.array([10.0, 5.0]), 0.0, np.zeros(1))
    assert u[0] == -1.0


def test_pid_gain_shape_validation():
    sys = D.double_integrator()
    with pytest.raises(ConfigError, match="match the target"):
        SIM.PidGains(k_p=[[1.0]], k_i=[[0.0, 0.0]], k_d=[[0.0, 0.0]], target=[0.0, 0.0])
    bad = SIM.PidGains(
        k_p=[[1.0, 0.0, 0.0]], k_i=[[0.0] * 3], k_d=[[0.0] * 3], target=[0.0, 0.0, 0.0]
    )
    with pytest.raises(ConfigError, match="needs"):
        SIM.PidController(sys, bad, dt=0.01)


def test_takeoff_law_pinned_values():
    u0 = SIM.takeoff_control(0.0, a=1.0, p=1.0, q=0.7)
    np.testing.assert_allclose(u0, [1.0, 0.0, 0.7 / 5.0], rtol=0, atol=1e-16)
    u = SIM.takeoff_control(2.0, a=8.0, p=4.0, q=5.0)
    np.testing.assert_allclose(
        u, [3.0, math.sin(4.0), math.cos(2.0)], rtol=1e-15
    )
    np.testing.assert_array_equal(
        SIM.TAKEOFF_X0, [0.0, 1.0, 2.0, 0.0, 0.0, np.pi, 1.0]
    )


def test_takeoff_reference_clamps_to_plane_box():
    sys = D.dubins_plane()
    ref = SIM.TakeoffReference(sys, a=200.0, p=30.0, q=1.0)
    u = ref(None, 1.0, None)
    assert u[0] == 10.5  # A_T clamped
    assert u[1] == 1.0  # P clamped
    with pytest.raises(ConfigError):
        SIM.TakeoffReference(D.double_integrator())


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


def _di_model(seed=0, scale=0.3):
    # phase-space obstacle spanning v in [-3, 3]: a position corridor
    # crossed at moderate speed lands inside it
    expr = C.rect_complement([2.0, -3.0], [4.0, 3.0]) & C.wall_interior(
        [-1.0, -6.0], [11.0, 6.0], thickness=1.0
    )
    base = N.init_params((2, 16, 16, 1), seed=seed)
    rng = np.random.default_rng(seed + 100)
    net = N.unflatten_params(base, rng.normal(scale=scale, size=base.n_params))
    return N.make_model(expr, C.SmoothingConfig(beta=10.0), net)


def test_rollout_unfiltered_equals_clamped_reference():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(8.0), dt=0.01)
    traj = SIM.rollout(sys, pid, x0=[1.0, 0.0], T=1.0, dt=0.01)
    assert len(traj) == 101
    np.testing.assert_array_equal(traj.times, np.arange(101) * 0.01)
    np.testing.assert_array_equal(traj.u, traj.u_ref)  # PID already clamps
    assert np.all(traj.u >= -1.0) and np.all(traj.u <= 1.0)
    assert traj.status == ["unfiltered"] * 101
    assert np.all(np.isnan(traj.h))
    assert not traj.truncated


def test_rollout_filtered_controls_stay_in_box():
    sys = D.double_integrator()
    model = _di_model()
    hyper = HJ.LossHyper(gamma=0.5, lam=0.2)
    pid = SIM.PidController(sys, SIM.di_pid_gains(9.0), dt=0.01)
    traj = SIM.rollout(sys, pid, x0=[0.5, 0.0], T=2.0, dt=0.01,
                       model=model, hyper=hyper)
    assert np.all(traj.u >= sys.input_lo) and np.all(traj.u <= sys.input_hi)
    assert set(traj.status) <= set(
        ("unconstrained", "clipped", "constraint_active", "infeasible_best_effort")
    )
    assert np.all(np.isfinite(traj.h))
    # logged constraint columns agree with direct evaluation
    np.testing.assert_array_equal(traj.c_exact, N.exact_values(model, traj.states))


def test_rollout_monitor_without_filtering_logs_crash():
    sys = D.double_integrator()
    model = _di_model()
    hyper = HJ.LossHyper(gamma=0.5, lam=0.2)
    pid = SIM.PidController(sys, SIM.di_pid_gains(8.0), dt=0.01)
    traj = SIM.rollout(sys, pid, x0=[0.5, 0.0], T=6.0, dt=0.01,
                       model=model, hyper=hyper, apply_filter=False)
    assert traj.status == ["unfiltered"] * len(traj)
    # the PID drives straight through the obstacle at x in [2, 4]
    assert float(np.min(traj.c_exact)) < 0.0


def test_rollout_truncates_on_domain_exit():
    sys = D.double_integrator()

    def full_throttle(x, t, u_prev):
        return np.array([1.0])

    traj = SIM.rollout(sys, full_throttle, x0=[10.0, 5.5], T=10.0, dt=0.01)
    assert traj.truncated
    assert len(traj) < 1001
    assert all(sys.in_domain(x) for x in traj.states)


def test_rollout_validation():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(5.0), dt=0.01)
    with pytest.raises(DomainError, match="outside"):
        SIM.rollout(sys, pid, x0=[20.0, 0.0], T=1.0)
    with pytest.raises(ConfigError):
        SIM.rollout(sys, pid, x0=[1.0, 0.0], T=0.0)
    with pytest.raises(ConfigError, match="hyper"):
        SIM.rollout(sys, pid, x0=[1.0, 0.0], T=1.0, model=_di_model())


def test_rollout_deterministic_and_csv_round_trip(tmp_path):
    sys = D.double_integrator()
    model = _di_model(seed=3)
    hyper = HJ.LossHyper(gamma=0.5, lam=0.2)

    def run():
        pid = SIM.PidController(sys, SIM.di_pid_gains(7.0), dt=0.01)
        return SIM.rollout(sys, pid, x0=[0.2, 0.1], T=1.5, dt=0.01,
                           model=model, hyper=hyper)

    t1, t2 = run(), run()
    np.testing.assert_array_equal(t1.states, t2.states)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    t1.to_csv(p1)
    t2.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()

    lines = p1.read_text().strip().split("\n")
    assert lines[0] == "t,x_1,x_2,uref_1,u_1,h,c_smooth,c_exact,status"
    assert len(lines) == len(t1) + 1
    cells = lines[1].split(",")
    assert float(cells[0]) == 0.0
    assert float(cells[1]) == 0.2
    assert cells[-1] == t1.status[0]
    # shortest-repr floats parse back to the exact logged values
    assert float(cells[5]) == t1.h[0]


def test_rollout_controller_reset_called():
    sys = D.double_integrator()
    pid = SIM.PidController(sys, SIM.di_pid_gains(6.0), dt=0.01)
    a = SIM.rollout(sys, pid, x0=[1.0, 0.0], T=1.0, dt=0.01)
    b = SIM.rollout(sys, pid, x0=[1.0, 0.0], T=1.0, dt=0.01)  # same instance
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.u, b.u)
