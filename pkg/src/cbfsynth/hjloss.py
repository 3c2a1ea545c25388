"""Steady-state Hamilton-Jacobi residual and the training losses.

The candidate h is a valid CBF on its zero superlevel set when the
steady-state PDE residual

    N(h, cbar)(x) = min( cbar(x) - h(x),  max_u [ L_f h + L_g h u ] + gamma h )

vanishes. The inner maximization is over a box input set, so the
supremum sits at a vertex and splits per coordinate: a positive
coefficient picks the upper input bound, a negative one the lower
(zero picks the upper; the value is unaffected).

Training minimizes the empirical risk

    J = mean_i [ N(h, cbar)(x_i)^2 + lambda * max(-Ham(x_i), 0)^2 ]

whose exact parameter gradient is assembled here: the closed-form
partials (p, q) = (dl/dh, dl/d grad_h) are pushed through the network's
double-backprop (network.h_param_grad). Branch choices at the kinks are
deterministic: min takes its first argument on ties, the hinge is
inactive when Ham >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from .dynamics import SystemSpec
from .errors import ConfigError

__all__ = [
    "LossHyper",
    "hamiltonian",
    "residual",
    "loss_hj",
    "loss_cbf",
    "risk",
    "precompute_dynamics",
    "batch_eval",
    "BatchEval",
    "risk_and_param_grad",
]


@dataclass(frozen=True)
class LossHyper:
    """gamma: discount rate of the PDE / filter; lam: CBF-penalty weight."""

    gamma: float = 0.5
    lam: float = 0.2

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ConfigError(
                f"need gamma >= 0 and lambda >= 0, got {self.gamma}, {self.lam}"
            )


def _box_max_term(lg, lo, hi):
    """max over the input box of lg . u, coordinatewise closed form."""
    u_star = np.where(lg >= 0.0, hi, lo)
    return (lg * u_star).sum(axis=-1), u_star


def hamiltonian(system: SystemSpec, h, grad_h, x, hyper: LossHyper) -> float:
    """L_f h + max_u L_g h u + gamma h at one state."""
    grad_h = np.asarray(grad_h, dtype=float)
    lf = float(grad_h @ system.f(x))
    lg = grad_h @ system.g(x)
    term, _ = _box_max_term(lg, system.input_lo, system.input_hi)
    return lf + float(term) + hyper.gamma * float(h)


def residual(system: SystemSpec, model: N.CbfModel, x, hyper: LossHyper) -> float:
    """The PDE residual N(h, cbar)(x) = min(cbar - h, Ham)."""
    x = np.asarray(x, dtype=float)
    h, gh, cbar = N.h_batch(model, x[None, :])
    ham = hamiltonian(system, h[0], gh[0], x, hyper)
    return min(float(cbar[0] - h[0]), ham)


def loss_hj(system: SystemSpec, model: N.CbfModel, x, hyper: LossHyper) -> float:
    return residual(system, model, x, hyper) ** 2


def loss_cbf(system: SystemSpec, model: N.CbfModel, x, hyper: LossHyper) -> float:
    x = np.asarray(x, dtype=float)
    h, gh, _ = N.h_batch(model, x[None, :])
    return max(-hamiltonian(system, h[0], gh[0], x, hyper), 0.0)


def precompute_dynamics(system: SystemSpec, X):
    """(f(x_i), g(x_i)) stacked over the batch; drawn once per dataset."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return system.f_batch(X), system.g_batch(X)


@dataclass
class BatchEval:
    """Per-sample loss pieces for a batch (all shape (B,) or (B, n))."""

    h: np.ndarray
    grad_h: np.ndarray
    cbar: np.ndarray
    ham: np.ndarray
    resid: np.ndarray
    l_hj: np.ndarray
    l_cbf: np.ndarray

    @property
    def risk(self) -> float:
        return float(np.mean(self.l_hj))

    def risk_total(self, lam: float) -> float:
        return float(np.mean(self.l_hj + lam * self.l_cbf**2))


def _h_with_optional_precomp(model, X, cbar_pre, backend):
    """h, grad h, cbar -- reusing precomputed (cbar, grad cbar) when
    given (they do not depend on theta, so training loops compute them
    once per dataset)."""
    if cbar_pre is None:
        return N.h_batch(model, X, backend=backend)
    cval, cgrad = cbar_pre
    dval, dgrad = N.delta_and_input_grad(model.net, X)
    return cval - dval, cgrad - dgrad, cval


def batch_eval(
    system: SystemSpec,
    model: N.CbfModel,
    X,
    hyper: LossHyper,
    precomp=None,
    cbar_pre=None,
    backend=None,
) -> BatchEval:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ConfigError("empty batch")
    F, G = precompute_dynamics(system, X) if precomp is None else precomp
    h, gh, cbar = _h_with_optional_precomp(model, X, cbar_pre, backend)
    lf = np.einsum("bi,bi->b", gh, F)
    lg = np.einsum("bi,bim->bm", gh, G)
    term, _ = _box_max_term(lg, system.input_lo, system.input_hi)
    ham = lf + term + hyper.gamma * h
    resid = np.minimum(cbar - h, ham)
    l_cbf = np.maximum(-ham, 0.0)
    return BatchEval(
        h=h, grad_h=gh, cbar=cbar, ham=ham, resid=resid, l_hj=resid**2, l_cbf=l_cbf
    )


def risk(system: SystemSpec, model: N.CbfModel, X, hyper: LossHyper) -> float:
    """mean( N^2 + lambda * max(-Ham, 0)^2 ) over the batch."""
    ev = batch_eval(system, model, X, hyper)
    return ev.risk_total(hyper.lam)


def risk_and_param_grad(
    system: SystemSpec,
    model: N.CbfModel,
    X,
    hyper: LossHyper,
    precomp=None,
    cbar_pre=None,
    backend=None,
):
    """(risk, flat d risk / d theta, BatchEval) for one batch.

    Closed-form partials per sample, with l = r^2 + lambda t^2,
    r = min(cbar - h, Ham), t = max(-Ham, 0):

        dl/dHam = 2 r [r on Ham branch] - 2 lambda t [Ham < 0]
        dl/dh   = -2 r [r on cbar-h branch] + gamma dl/dHam
        dl/dgrad_h = dl/dHam (f + g u*)        u* the maximizing vertex

    cbar is theta-independent, so only the delta-network path remains
    and network.h_param_grad finishes the job.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ConfigError("empty batch")
    B = X.shape[0]
    F, G = precompute_dynamics(system, X) if precomp is None else precomp
    h, gh, cbar = _h_with_optional_precomp(model, X, cbar_pre, backend)
    lf = np.einsum("bi,bi->b", gh, F)
    lg = np.einsum("bi,bim->bm", gh, G)
    term, u_star = _box_max_term(lg, system.input_lo, system.input_hi)
    ham = lf + term + hyper.gamma * h
    delta = cbar - h
    resid = np.minimum(delta, ham)
    on_ham = ham < delta  # ties go to the cbar - h branch
    t = np.maximum(-ham, 0.0)

    dl_dham = 2.0 * resid * on_ham - 2.0 * hyper.lam * t * (ham < 0.0)
    dl_dh = -2.0 * resid * (~on_ham) + hyper.gamma * dl_dham
    # f + g u*, shape (B, n)
    dham_dgrad = F + np.einsum("bim,bm->bi", G, u_star)
    dl_dgrad = dl_dham[:, None] * dham_dgrad

    grad = N.h_param_grad(model, X, dl_dh / B, dl_dgrad / B)
    ev = BatchEval(
        h=h, grad_h=gh, cbar=cbar, ham=ham, resid=resid, l_hj=resid**2, l_cbf=t
    )
    return ev.risk_total(hyper.lam), grad, ev
