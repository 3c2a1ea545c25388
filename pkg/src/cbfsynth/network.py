"""Residual network delta_theta and the CBF candidate h = cbar - delta.

delta is a plain MLP with a softplus output head, so delta(x) > 0
strictly and h(x) < cbar(x) everywhere: the learned zero superlevel set
can only shrink the smooth inner approximation, never leave it.

Training needs d/dtheta of scalars built from both h and grad_x h. The
input gradient is computed by a forward tangent pass (directional
derivative along a per-sample direction r), and that extended graph is
reverse-differentiated by hand:

    forward:   z_{k+1} = sigma(a_k),        a_k = z_k W_k^T + b_k
    tangent:   zdot_{k+1} = sigma'(a_k) o adot_k,  adot_k = zdot_k W_k^T
    phi = sum_i alpha_i sp(r_i) + sp'(r_i) rdot_i      (r = last a)

    abar_L  = alpha sp'(r) + sp''(r) rdot     acheck_L = sp'(r)
    Wbar_k  = abar_k^T z_k + acheck_k^T zdot_k,   bbar_k = sum_B abar_k
    zbar_k  = abar_k W_k,   zdotbar_k = acheck_k W_k
    abar_{k-1}   = zbar o sigma'(a) + zdotbar o adot o sigma''(a)
    acheck_{k-1} = zdotbar o sigma'(a)

No autodiff framework is involved; finite-difference oracles in the
tests are the correctness authority. All arrays are float64 and all
reductions run in a fixed order, so results are reproducible bit for
bit for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from . import constraints as C
from . import kernels as K
from .errors import ConfigError

# ---------------------------------------------------------------------------
# activations: each returns (sigma, sigma', sigma'') elementwise
# ---------------------------------------------------------------------------


def _act_tanh(a):
    t = np.tanh(a)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _act_elu(a):
    e = np.exp(np.minimum(a, 0.0))
    pos = a > 0
    val = np.where(pos, a, e - 1.0)
    d1 = np.where(pos, 1.0, e)
    d2 = np.where(pos, 0.0, e)
    return val, d1, d2


def _act_swish(a):
    s = _sigmoid(a)
    val = a * s
    d1 = s * (1.0 + a * (1.0 - s))
    d2 = s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s))
    return val, d1, d2


ACTIVATIONS = {"tanh": _act_tanh, "elu": _act_elu, "swish": _act_swish}


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(r, beta=1.0):
    """(1/beta) log(1 + exp(beta r)) in the overflow-safe form
    max(r,0) + log1p(exp(-|r|)) (applied to beta*r)."""
    br = beta * np.asarray(r, dtype=float)
    return (np.maximum(br, 0.0) + np.log1p(np.exp(-np.abs(br)))) / beta


def softplus_d1(r, beta=1.0):
    return _sigmoid(beta * np.asarray(r, dtype=float))


def softplus_d2(r, beta=1.0):
    s = _sigmoid(beta * np.asarray(r, dtype=float))
    return beta * s * (1.0 - s)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Weights of delta_theta. widths = [n, w_1, ..., w_L, 1].

    in_shift/in_scale define a fixed (non-trainable) affine input map
    z_0 = (x - in_shift) * in_scale, normally mapping the domain box to
    [-1, 1]^n so the first tanh layer is well-conditioned regardless of
    the domain's units. Identity by default.
    """

    widths: tuple
    activation: str
    softplus_beta: float
    weights: List[np.ndarray]  # W_k has shape (widths[k+1], widths[k])
    biases: List[np.ndarray]  # b_k has shape (widths[k+1],)
    in_shift: np.ndarray = None
    in_scale: np.ndarray = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {sorted(ACTIVATIONS)}, "
                f"got {self.activation!r}"
            )
        if not (self.softplus_beta > 0):
            raise ConfigError("softplus_beta must be > 0")
        w = tuple(int(v) for v in self.widths)
        if len(w) < 2 or any(v <= 0 for v in w) or w[-1] != 1:
            raise ConfigError(f"invalid widths {w}: need [n, ..., 1] all positive")
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ConfigError("layer count inconsistent with widths")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[k + 1], w[k]) or b.shape != (w[k + 1],):
                raise ConfigError(f"layer {k} shapes {W.shape}/{b.shape} do not match widths {w}")
        object.__setattr__(self, "widths", w)
        n = w[0]
        shift = np.zeros(n) if self.in_shift is None else np.asarray(self.in_shift, dtype=float)
        scale = np.ones(n) if self.in_scale is None else np.asarray(self.in_scale, dtype=float)
        if shift.shape != (n,) or scale.shape != (n,):
            raise ConfigError(f"input map must have shape ({n},)")
        if not np.all(scale > 0):
            raise ConfigError("in_scale entries must be > 0")
        object.__setattr__(self, "in_shift", shift)
        object.__setattr__(self, "in_scale", scale)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return replace(
            self,
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            in_shift=self.in_shift.copy(),
            in_scale=self.in_scale.copy(),
        )


def init_params(
    widths, activation="tanh", seed=0, softplus_beta=1.0, input_box=None
) -> MlpParams:
    """Xavier-uniform hidden layers; final layer exactly zero, so
    delta(x) = softplus(0) = ln(2)/softplus_beta at every x initially.

    input_box=(lo, hi) installs the affine map that sends the box to
    [-1, 1]^n before the first layer (None keeps the identity map).
    """
    widths = tuple(int(v) for v in widths)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for k in range(len(widths) - 1):
        fan_in, fan_out = widths[k], widths[k + 1]
        if k == len(widths) - 2:
            W = np.zeros((fan_out, fan_in))
        else:
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    in_shift = in_scale = None
    if input_box is not None:
        lo = np.asarray(input_box[0], dtype=float)
        hi = np.asarray(input_box[1], dtype=float)
        if lo.shape != (widths[0],) or hi.shape != (widths[0],) or not np.all(hi > lo):
            raise ConfigError("input_box must be (lo, hi) with hi > lo, length widths[0]")
        in_shift = 0.5 * (lo + hi)
        in_scale = 2.0 / (hi - lo)
    return MlpParams(
        widths=widths,
        activation=activation,
        softplus_beta=float(softplus_beta),
        weights=weights,
        biases=biases,
        in_shift=in_shift,
        in_scale=in_scale,
    )


def flatten_params(params: MlpParams) -> np.ndarray:
    """Layer-major, weights before bias, weights row-major. This order
    is part of the checkpoint format; do not change it."""
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(params: MlpParams, vec: np.ndarray) -> MlpParams:
    """Rebuild an MlpParams with the same metadata from a flat vector."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (params.n_params,):
        raise ConfigError(f"expected {params.n_params} entries, got {vec.shape}")
    weights, biases, pos = [], [], 0
    for W, b in zip(params.weights, params.biases):
        weights.append(vec[pos : pos + W.size].reshape(W.shape).copy())
        pos += W.size
        biases.append(vec[pos : pos + b.size].copy())
        pos += b.size
    return replace(params, weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# delta forward / gradients
# ---------------------------------------------------------------------------


def _forward_tapes(params: MlpParams, X):
    """All layer activations Z[k] and pre-activations A[k]. Z[0] is the
    normalized input (x - in_shift) * in_scale."""
    act = ACTIVATIONS[params.activation]
    Z = [np.ascontiguousarray((X - params.in_shift) * params.in_scale)]
    A, D1, D2 = [], [], []
    L = params.n_layers
    for k in range(L):
        a = Z[k] @ params.weights[k].T + params.biases[k]
        A.append(a)
        if k < L - 1:
            z, d1, d2 = act(a)
            Z.append(z)
            D1.append(d1)
            D2.append(d2)
    return Z, A, D1, D2


def delta_forward(params: MlpParams, X) -> np.ndarray:
    """delta(x) for a batch; shape (B,). Strictly positive."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, A, _, _ = _forward_tapes(params, X)
    return softplus(A[-1][:, 0], params.softplus_beta)


def delta_and_input_grad(params: MlpParams, X):
    """(delta, grad_x delta) for a batch: (B,), (B, n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z, A, D1, _ = _forward_tapes(params, X)
    r = A[-1][:, 0]
    val = softplus(r, params.softplus_beta)
    abar = softplus_d1(r, params.softplus_beta)[:, None]
    for k in range(params.n_layers - 1, -1, -1):
        zbar = abar @ params.weights[k]
        if k > 0:
            abar = zbar * D1[k - 1]
    return val, zbar * params.in_scale


def delta_param_grad(params: MlpParams, X, alpha, R) -> np.ndarray:
    """Flat parameter gradient of
        phi = sum_i alpha_i * delta(x_i) + sum_i R_i . grad_x delta(x_i).

    The input-gradient term is handled as a forward tangent pass along
    R (per-sample direction), and the combined graph is reverse-
    differentiated; see the module docstring for the recursions.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B, n = X.shape
    alpha = np.asarray(alpha, dtype=float).reshape(B)
    R = np.asarray(R, dtype=float).reshape(B, n)
    L = params.n_layers
    Z, A, D1, D2 = _forward_tapes(params, X)

    # forward tangent along R (mapped through the input normalization)
    Zt = [R * params.in_scale]
    At = []
    for k in range(L):
        at = Zt[k] @ params.weights[k].T
        At.append(at)
        if k < L - 1:
            Zt.append(D1[k] * at)

    r = A[-1][:, 0]
    rt = At[-1][:, 0]
    sp1 = softplus_d1(r, params.softplus_beta)
    sp2 = softplus_d2(r, params.softplus_beta)
    abar = (alpha * sp1 + sp2 * rt)[:, None]
    acheck = sp1[:, None]

    Wg = [None] * L
    bg = [None] * L
    for k in range(L - 1, -1, -1):
        Wg[k] = abar.T @ Z[k] + acheck.T @ Zt[k]
        bg[k] = abar.sum(axis=0)
        if k > 0:
            zbar = abar @ params.weights[k]
            ztbar = acheck @ params.weights[k]
            abar = zbar * D1[k - 1] + ztbar * At[k - 1] * D2[k - 1]
            acheck = ztbar * D1[k - 1]

    parts = []
    for k in range(L):
        parts.append(Wg[k].ravel())
        parts.append(bg[k])
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# the CBF candidate h = cbar - delta
# ---------------------------------------------------------------------------


@dataclass
class CbfModel:
    """Constraint tree + smoothing + residual net. expr is kept in NNF;
    program is the compiled form when all leaves are affine, else None
    (tree-walk evaluation)."""

    expr: C.Expr
    smoothing: C.SmoothingConfig
    net: MlpParams
    program: Optional[K.CompiledConstraint] = None

    @property
    def n_dim(self) -> int:
        return self.net.widths[0]

    @property
    def beta(self) -> float:
        return self.smoothing.beta


def make_model(expr: C.Expr, smoothing: C.SmoothingConfig, net: MlpParams) -> CbfModel:
    expr = C.normalize_nnf(expr)
    try:
        program = K.compile_constraint(expr, n_dim=net.widths[0])
    except ConfigError as err:
        if "generic-smooth" not in str(err):
            raise
        program = None
    return CbfModel(expr=expr, smoothing=smoothing, net=net, program=program)


def cbar_batch(model: CbfModel, X, backend=None):
    """(cbar, grad cbar) for a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.program is not None:
        return K.batch_smooth_grad(model.program, X, model.beta, backend=backend)
    vals = np.empty(X.shape[0])
    grads = np.empty_like(X)
    for i, x in enumerate(X):
        vals[i], grads[i] = C._smooth_value_grad(model.expr, x, model.beta)
    return vals, grads


def cbar_values(model: CbfModel, X, backend=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.program is not None:
        return K.batch_smooth(model.program, X, model.beta, backend=backend)
    return np.array([C.eval_smooth(model.expr, x, model.smoothing) for x in X])


def exact_values(model: CbfModel, X, backend=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.program is not None:
        return K.batch_exact(model.program, X, backend=backend)
    return np.array([C.eval_exact(model.expr, x) for x in X])


def h_batch(model: CbfModel, X, backend=None):
    """(h, grad h, cbar) for a batch; h = cbar - delta."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cval, cgrad = cbar_batch(model, X, backend=backend)
    dval, dgrad = delta_and_input_grad(model.net, X)
    return cval - dval, cgrad - dgrad, cval


def h_value(model: CbfModel, x, backend=None) -> float:
    h, _, _ = h_batch(model, np.asarray(x, dtype=float)[None, :], backend=backend)
    return float(h[0])


def h_input_grad(model: CbfModel, x, backend=None) -> np.ndarray:
    _, g, _ = h_batch(model, np.asarray(x, dtype=float)[None, :], backend=backend)
    return g[0]


def h_param_grad(model: CbfModel, X, p, q) -> np.ndarray:
    """Flat parameter gradient of sum_i p_i h(x_i) + q_i . grad h(x_i).

    cbar does not depend on theta and h = cbar - delta, so this is just
    the negated delta gradient with the same coefficients.
    """
    return -delta_param_grad(model.net, X, p, q)
