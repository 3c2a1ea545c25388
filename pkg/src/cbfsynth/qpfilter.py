"""Minimally invasive CBF safety filter: an exact box-constrained QP.

At state x the filter perturbs a reference control as little as
possible while enforcing the barrier condition:

    u* = argmin_u ||u - u_ref||^2
         s.t.   a . u >= b,    lo <= u <= hi

with a = (L_g h)^T and b = -L_f h - gamma h, so the half-space is
exactly { u : hdot(x, u) + gamma h(x) >= 0 }.

The solve is exact and iteration-free. Dualize the half-space with
multiplier mu >= 0; the box-projected stationary point is

    u(mu) = clamp(u_ref + mu a, lo, hi)

and phi(mu) = a . u(mu) is piecewise linear and nondecreasing, with at
most 2m breakpoints (each coordinate enters and leaves its linear
regime once). The filter returns the smallest mu with phi(mu) = b by
sorting the breakpoints and interpolating on the crossing segment.
When even phi(inf) = max over the box of a . u falls short of b, no
admissible input satisfies the barrier condition; the filter then
returns the most defensive input (the argmax of a . u, which maximizes
hdot) and reports it in the status rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from .dynamics import SystemSpec
from .errors import ConfigError
from .hjloss import LossHyper

__all__ = [
    "FilterResult",
    "STATUSES",
    "cbf_constraint",
    "solve_filter",
    "filter_control",
]

STATUSES = (
    "unconstrained",
    "clipped",
    "constraint_active",
    "infeasible_best_effort",
)


@dataclass(frozen=True)
class FilterResult:
    """Outcome of one filter solve.

    u_filtered is always inside the input box. multiplier is the
    Lagrange multiplier of the half-space constraint (0 when inactive,
    +inf when infeasible); slack is a . u_filtered - b, which is
    >= -1e-9 whenever status != infeasible_best_effort.
    """

    u_filtered: np.ndarray
    status: str
    multiplier: float
    slack: float


def cbf_constraint(system: SystemSpec, model: N.CbfModel, x, hyper: LossHyper,
                   backend=None):
    """(a, b) of the per-state input constraint a . u >= b.

    a = (L_g h)^T and b = -L_f h - gamma h, so feasibility of the
    constraint over the input box is the same statement as
    hamiltonian(x) >= 0.
    """
    x = np.asarray(x, dtype=float)
    h, gh, _ = N.h_batch(model, x[None, :], backend=backend)
    lf = float(gh[0] @ system.f(x))
    a = gh[0] @ system.g(x)
    return a, -lf - hyper.gamma * float(h[0])


def _clamp(u, lo, hi):
    return np.minimum(np.maximum(u, lo), hi)


def solve_filter(a, b, u_ref, input_box) -> FilterResult:
    """Exact minimizer of ||u - u_ref||^2 over {a . u >= b} in the box.

    Total: infeasibility comes back as a status, never an exception.
    """
    a = np.asarray(a, dtype=float).ravel()
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    lo = np.asarray(input_box[0], dtype=float).ravel()
    hi = np.asarray(input_box[1], dtype=float).ravel()
    m = a.shape[0]
    if u_ref.shape != (m,) or lo.shape != (m,) or hi.shape != (m,):
        raise ConfigError(
            f"inconsistent filter dimensions: a {a.shape}, u_ref {u_ref.shape}, "
            f"box {lo.shape}/{hi.shape}"
        )
    if not np.all(lo <= hi):
        raise ConfigError("empty input box: need lo <= hi")
    b = float(b)

    u0 = _clamp(u_ref, lo, hi)
    phi0 = float(a @ u0)
    if phi0 >= b:
        status = "unconstrained" if np.array_equal(u0, u_ref) else "clipped"
        return FilterResult(u_filtered=u0, status=status, multiplier=0.0,
                            slack=phi0 - b)

    # Breakpoints of phi: coordinate i is linear in mu on [s_i, e_i]
    # (saturated at one bound before, at the other after).
    times = []
    for i in range(m):
        if a[i] == 0.0:
            continue
        t_lo = (lo[i] - u_ref[i]) / a[i]
        t_hi = (hi[i] - u_ref[i]) / a[i]
        for t in (min(t_lo, t_hi), max(t_lo, t_hi)):
            if t > 0.0:
                times.append(t)
    times.sort()

    mu_prev, phi_prev = 0.0, phi0
    for t in times:
        phi_t = float(a @ _clamp(u_ref + t * a, lo, hi))
        if phi_t >= b:
            # phi is linear on [mu_prev, t] and crosses b inside it
            mu = mu_prev + (b - phi_prev) * (t - mu_prev) / (phi_t - phi_prev)
            u = _clamp(u_ref + mu * a, lo, hi)
            return FilterResult(u_filtered=u, status="constraint_active",
                                multiplier=mu, slack=float(a @ u) - b)
        mu_prev, phi_prev = t, phi_t

    # past the last breakpoint every coordinate is saturated at the
    # bound maximizing a . u, so phi_prev = phi(inf) < b: infeasible.
    u = np.where(a > 0.0, hi, np.where(a < 0.0, lo, u0))
    return FilterResult(u_filtered=u, status="infeasible_best_effort",
                        multiplier=np.inf, slack=float(a @ u) - b)


def filter_control(system: SystemSpec, model: N.CbfModel, x, u_ref,
                   hyper: LossHyper, backend=None) -> FilterResult:
    """cbf_constraint composed with solve_filter at one state."""
    a, b = cbf_constraint(system, model, x, hyper, backend=backend)
    return solve_filter(a, b, u_ref, (system.input_lo, system.input_hi))
