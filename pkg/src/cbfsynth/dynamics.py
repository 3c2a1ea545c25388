"""Control-affine system definitions: xdot = f(x) + g(x) u, u in a box.

Two built-in systems:

* double integrator (n=2, m=1): position/velocity chain, the small
  benchmark every derivation is hand-checkable on.
* Dubins fixed-wing aircraft (n=7, m=3): kinematic plane with
  coordinated-turn roll rate R = (g_d / V_T) sin(phi) cos(theta)
  substituted into the drift, so g(x) stays the exact 7x3 matrix the
  Lie derivatives need. State (n, e, d, phi, theta, psi, V_T), input
  (A_T, P, Q).

Angles are not wrapped; the sampling domain is the stated +-2pi box.
The plane's drift divides by V_T and cos(theta): the domain box keeps
V_T >= 0.5, and theta = +-pi/2 is unreachable in floating point, but
exact zeros are still guarded and reported as DomainError.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class SystemSpec:
    """A control-affine system on a box domain with box inputs."""

    name: str
    state_labels: Tuple[str, ...]
    input_labels: Tuple[str, ...]
    f: Callable[[np.ndarray], np.ndarray]  # (n,) -> (n,)
    g: Callable[[np.ndarray], np.ndarray]  # (n,) -> (n, m)
    f_batch: Callable[[np.ndarray], np.ndarray]  # (B, n) -> (B, n)
    g_batch: Callable[[np.ndarray], np.ndarray]  # (B, n) -> (B, n, m)
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray

    @property
    def state_dim(self) -> int:
        return len(self.state_labels)

    @property
    def input_dim(self) -> int:
        return len(self.input_labels)

    def in_domain(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.domain_lo) and np.all(x <= self.domain_hi))

    def xdot(self, x, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.f(x) + self.g(x) @ u


def double_integrator() -> SystemSpec:
    """xdot = v, vdot = u; x in [-1, 11], v in [-6, 6], |u| <= 1."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.array([x[1], 0.0])

    def g(x):
        return np.array([[0.0], [1.0]])

    def f_batch(X):
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        out[:, 0] = X[:, 1]
        return out

    def g_batch(X):
        X = np.asarray(X, dtype=float)
        out = np.zeros((X.shape[0], 2, 1))
        out[:, 1, 0] = 1.0
        return out

    return SystemSpec(
        name="di",
        state_labels=("x", "v"),
        input_labels=("u",),
        f=f,
        g=g,
        f_batch=f_batch,
        g_batch=g_batch,
        domain_lo=np.array([-1.0, -6.0]),
        domain_hi=np.array([11.0, 6.0]),
        input_lo=np.array([-1.0]),
        input_hi=np.array([1.0]),
    )


_PLANE_LABELS = ("n", "e", "d", "phi", "theta", "psi", "V_T")


def _plane_guard(vt, ctheta):
    if np.any(vt <= 0.0):
        raise DomainError("plane dynamics need V_T > 0")
    if np.any(ctheta == 0.0):
        raise DomainError("plane dynamics undefined at theta = +-pi/2")


def dubins_plane(g_d: float = 9.81) -> SystemSpec:
    """Kinematic fixed-wing model, Dubins-plane form.

    Drift (with R = (g_d / V_T) sin(phi) cos(theta) substituted):
        ndot     = V_T cos(psi) cos(theta)
        edot     = V_T sin(psi) cos(theta)
        ddot     = -V_T sin(theta)
        phidot   = cos(phi) tan(theta) R      (+ P + sin(phi) tan(theta) Q)
        thetadot = -sin(phi) R                (+ cos(phi) Q)
        psidot   = (cos(phi) / cos(theta)) R  (+ (sin(phi) / cos(theta)) Q)
        VTdot    = 0                          (+ A_T)
    """
    if not (g_d > 0):
        raise ConfigError(f"g_d must be > 0, got {g_d}")

    def f(x):
        x = np.asarray(x, dtype=float)
        phi, theta, psi, vt = x[3], x[4], x[5], x[6]
        sphi, cphi = np.sin(phi), np.cos(phi)
        stheta, ctheta = np.sin(theta), np.cos(theta)
        _plane_guard(vt, ctheta)
        r = (g_d / vt) * sphi * ctheta
        return np.array(
            [
                vt * np.cos(psi) * ctheta,
                vt * np.sin(psi) * ctheta,
                -vt * stheta,
                cphi * (stheta / ctheta) * r,
                -sphi * r,
                (cphi / ctheta) * r,
                0.0,
            ]
        )

    def g(x):
        x = np.asarray(x, dtype=float)
        phi, theta = x[3], x[4]
        sphi, cphi = np.sin(phi), np.cos(phi)
        stheta, ctheta = np.sin(theta), np.cos(theta)
        _plane_guard(np.asarray(x[6]), ctheta)
        out = np.zeros((7, 3))
        out[6, 0] = 1.0  # A_T -> VTdot
        out[3, 1] = 1.0  # P -> phidot
        out[3, 2] = sphi * (stheta / ctheta)
        out[4, 2] = cphi
        out[5, 2] = sphi / ctheta
        return out

    def f_batch(X):
        X = np.asarray(X, dtype=float)
        phi, theta, psi, vt = X[:, 3], X[:, 4], X[:, 5], X[:, 6]
        sphi, cphi = np.sin(phi), np.cos(phi)
        stheta, ctheta = np.sin(theta), np.cos(theta)
        _plane_guard(vt, ctheta)
        r = (g_d / vt) * sphi * ctheta
        out = np.empty_like(X)
        out[:, 0] = vt * np.cos(psi) * ctheta
        out[:, 1] = vt * np.sin(psi) * ctheta
        out[:, 2] = -vt * stheta
        out[:, 3] = cphi * (stheta / ctheta) * r
        out[:, 4] = -sphi * r
        out[:, 5] = (cphi / ctheta) * r
        out[:, 6] = 0.0
        return out

    def g_batch(X):
        X = np.asarray(X, dtype=float)
        phi, theta = X[:, 3], X[:, 4]
        sphi, cphi = np.sin(phi), np.cos(phi)
        stheta, ctheta = np.sin(theta), np.cos(theta)
        _plane_guard(X[:, 6], ctheta)
        out = np.zeros((X.shape[0], 7, 3))
        out[:, 6, 0] = 1.0
        out[:, 3, 1] = 1.0
        out[:, 3, 2] = sphi * (stheta / ctheta)
        out[:, 4, 2] = cphi
        out[:, 5, 2] = sphi / ctheta
        return out

    two_pi = 2.0 * np.pi
    return SystemSpec(
        name="plane",
        state_labels=_PLANE_LABELS,
        input_labels=("A_T", "P", "Q"),
        f=f,
        g=g,
        f_batch=f_batch,
        g_batch=g_batch,
        domain_lo=np.array([-6.0, -6.0, -1.0, -two_pi, -two_pi, -two_pi, 0.5]),
        domain_hi=np.array([6.0, 6.0, 11.0, two_pi, two_pi, two_pi, 2.0]),
        input_lo=np.array([-10.5, -1.0, -1.0]),
        input_hi=np.array([10.5, 1.0, 1.0]),
    )


def by_name(name: str, **kwargs) -> SystemSpec:
    """Look up a built-in system ("di" | "plane")."""
    if name == "di":
        return double_integrator()
    if name == "plane":
        return dubins_plane(**kwargs)
    raise ConfigError(f"unknown system {name!r}; expected 'di' or 'plane'")
