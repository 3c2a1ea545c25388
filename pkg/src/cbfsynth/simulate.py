"""Closed-loop simulation: RK4 rollout of reference + safety filter.

The integrator is classical fixed-step RK4 with the control held
constant over each step (zero-order hold): the filter runs once per
step, and any inter-sample constraint violation would show up in the
logged exact constraint values rather than being assumed away.

Reference controllers follow one calling convention,

    u_ref = controller(x, t, u_prev)

where u_prev is the input actually applied at the previous step
(zeros before the first). Stateful controllers (the PID integrator)
expose reset(), which rollout() calls once at the start so a
controller instance can be reused across rollouts deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import network as N
from . import qpfilter as Q
from .dynamics import SystemSpec
from .errors import ConfigError, DomainError
from .hjloss import LossHyper

__all__ = [
    "rk4_step",
    "PidGains",
    "PidController",
    "di_pid_gains",
    "takeoff_control",
    "TakeoffReference",
    "TAKEOFF_X0",
    "Trajectory",
    "rollout",
]


def rk4_step(system: SystemSpec, x, u, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of xdot = f(x) + g(x)u."""
    if not (dt > 0):
        raise ConfigError(f"dt must be > 0, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = system.xdot(x, u)
    k2 = system.xdot(x + 0.5 * dt * k1, u)
    k3 = system.xdot(x + 0.5 * dt * k2, u)
    k4 = system.xdot(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"non-finite state after RK4 step from {x.tolist()}")
    return out


# ---------------------------------------------------------------------------
# reference controllers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PidGains:
    """PID gain matrices, each (m, n): input = K e for state error e."""

    k_p: np.ndarray
    k_i: np.ndarray
    k_d: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        k_p = np.atleast_2d(np.asarray(self.k_p, dtype=float))
        k_i = np.atleast_2d(np.asarray(self.k_i, dtype=float))
        k_d = np.atleast_2d(np.asarray(self.k_d, dtype=float))
        target = np.asarray(self.target, dtype=float)
        n = target.shape[0]
        for name, k in (("k_p", k_p), ("k_i", k_i), ("k_d", k_d)):
            if k.ndim != 2 or k.shape[1] != n:
                raise ConfigError(
                    f"{name} must be (m, {n}) to match the target state, got {k.shape}"
                )
        if not (k_p.shape == k_i.shape == k_d.shape):
            raise ConfigError("k_p, k_i, k_d must share one shape")
        object.__setattr__(self, "k_p", k_p)
        object.__setattr__(self, "k_i", k_i)
        object.__setattr__(self, "k_d", k_d)
        object.__setattr__(self, "target", target)


def di_pid_gains(target_x: float, target_v: float = 0.0) -> PidGains:
    """The double-integrator gains: K_p = (-1.2, -2.0),
    K_d = (0.1, 0.1), K_i = 0."""
    return PidGains(
        k_p=[[-1.2, -2.0]],
        k_i=[[0.0, 0.0]],
        k_d=[[0.1, 0.1]],
        target=[target_x, target_v],
    )


class PidController:
    """u = K_p e + K_i integral(e) + K_d edot, clamped to the input box.

    e = x - target. The derivative term uses the known state derivative
    f(x) + g(x) u_prev instead of finite differencing, so there is no
    startup spike; the integral accumulates by the trapezoid rule on
    the rollout's fixed dt.
    """

    def __init__(self, system: SystemSpec, gains: PidGains, dt: float):
        if gains.k_p.shape != (system.input_dim, system.state_dim):
            raise ConfigError(
                f"gains are {gains.k_p.shape}, system {system.name!r} needs "
                f"({system.input_dim}, {system.state_dim})"
            )
        if not (dt > 0):
            raise ConfigError(f"dt must be > 0, got {dt}")
        self.system = system
        self.gains = gains
        self.dt = float(dt)
        self.reset()

    def reset(self):
        self._integral = np.zeros(self.system.state_dim)
        self._e_prev: Optional[np.ndarray] = None

    def __call__(self, x, t, u_prev) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        e = x - self.gains.target
        if self._e_prev is not None:
            self._integral = self._integral + 0.5 * self.dt * (self._e_prev + e)
        self._e_prev = e
        edot = self.system.xdot(x, u_prev)
        u = self.gains.k_p @ e + self.gains.k_i @ self._integral + self.gains.k_d @ edot
        return np.minimum(np.maximum(u, self.system.input_lo), self.system.input_hi)


TAKEOFF_X0 = np.array([0.0, 1.0, 2.0, 0.0, 0.0, np.pi, 1.0])


def takeoff_control(t: float, a: float = 1.0, p: float = 1.0, q: float = 1.0):
    """The open-loop takeoff law before clamping:
    A_T = (a/8) t + 1, P = (p/4) sin(2t), Q = (q/5) cos(t)."""
    return np.array(
        [(a / 8.0) * t + 1.0, (p / 4.0) * math.sin(2.0 * t), (q / 5.0) * math.cos(t)]
    )


class TakeoffReference:
    """Time-indexed takeoff policy clamped to the system's input box."""

    def __init__(self, system: SystemSpec, a: float = 1.0, p: float = 1.0,
                 q: float = 1.0):
        if system.input_dim != 3:
            raise ConfigError(
                f"takeoff reference drives (A_T, P, Q); system {system.name!r} "
                f"has {system.input_dim} inputs"
            )
        self.system = system
        self.a, self.p, self.q = float(a), float(p), float(q)

    def __call__(self, x, t, u_prev) -> np.ndarray:
        u = takeoff_control(t, self.a, self.p, self.q)
        return np.minimum(np.maximum(u, self.system.input_lo), self.system.input_hi)


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """One closed-loop run on a uniform time grid.

    Arrays hold K+1 rows (initial state included); the final row's
    controls are evaluated at the final state but never applied. When
    the state leaves the domain box the run stops at the last
    in-domain state and truncated is set.
    """

    times: np.ndarray
    states: np.ndarray
    u_ref: np.ndarray
    u: np.ndarray
    h: np.ndarray
    c_smooth: np.ndarray
    c_exact: np.ndarray
    status: List[str]
    truncated: bool = False

    def __len__(self) -> int:
        return self.times.shape[0]

    def to_csv(self, path) -> None:
        """CSV columns: t, x_1..x_n, uref_1..uref_m, u_1..u_m, h,
        c_smooth, c_exact, status. Floats as shortest round-trip repr,
        so identical runs serialize byte-identically."""
        n = self.states.shape[1]
        m = self.u.shape[1]
        cols = (
            ["t"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"uref_{j + 1}" for j in range(m)]
            + [f"u_{j + 1}" for j in range(m)]
            + ["h", "c_smooth", "c_exact", "status"]
        )
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for k in range(len(self)):
                row = (
                    [self.times[k]]
                    + list(self.states[k])
                    + list(self.u_ref[k])
                    + list(self.u[k])
                    + [self.h[k], self.c_smooth[k], self.c_exact[k]]
                )
                f.write(",".join(repr(float(v)) for v in row))
                f.write(f",{self.status[k]}\n")


def rollout(
    system: SystemSpec,
    reference: Callable,
    x0,
    T: float,
    dt: float = 0.01,
    model: Optional[N.CbfModel] = None,
    hyper: Optional[LossHyper] = None,
    apply_filter: bool = True,
    backend=None,
) -> Trajectory:
    """Integrate the closed loop for ceil(T/dt) steps.

    With a model and apply_filter, every step runs the reference
    through the CBF-QP (hyper supplies the gamma the checkpoint was
    trained with). With a model and apply_filter=False the clamped
    reference is applied as-is but h / c columns are still logged, so
    an unfiltered run can be audited for constraint crossings. Without
    a model those columns are NaN.
    """
    if not (dt > 0) or not (T > 0):
        raise ConfigError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    filtering = model is not None and apply_filter
    if filtering and hyper is None:
        raise ConfigError("filtering needs the hyper the model was trained with")
    x = np.asarray(x0, dtype=float).copy()
    if not system.in_domain(x):
        raise DomainError(f"x0 {x.tolist()} outside the domain box")
    if hasattr(reference, "reset"):
        reference.reset()

    steps = int(math.ceil(T / dt - 1e-12))
    m = system.input_dim
    rows_t, rows_x, rows_ur, rows_u, statuses = [], [], [], [], []
    u_prev = np.zeros(m)
    truncated = False
    for k in range(steps + 1):
        t = k * dt
        u_ref = np.asarray(reference(x, t, u_prev), dtype=float)
        if filtering:
            res = Q.filter_control(system, model, x, u_ref, hyper, backend=backend)
            u, status = res.u_filtered, res.status
        else:
            u = np.minimum(np.maximum(u_ref, system.input_lo), system.input_hi)
            status = "unfiltered"
        rows_t.append(t)
        rows_x.append(x)
        rows_ur.append(u_ref)
        rows_u.append(u)
        statuses.append(status)
        if k == steps:
            break
        x_next = rk4_step(system, x, u, dt)
        if not system.in_domain(x_next):
            truncated = True
            break
        x, u_prev = x_next, u

    states = np.array(rows_x)
    if model is not None:
        hv, _, cs = N.h_batch(model, states, backend=backend)
        ce = N.exact_values(model, states, backend=backend)
    else:
        hv = cs = ce = np.full(states.shape[0], np.nan)
    return Trajectory(
        times=np.array(rows_t),
        states=states,
        u_ref=np.array(rows_ur),
        u=np.array(rows_u),
        h=hv,
        c_smooth=cs,
        c_exact=ce,
        status=statuses,
        truncated=truncated,
    )
