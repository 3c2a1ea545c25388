"""Batched evaluation kernels for compiled constraint trees.

The recursive evaluators in constraints.py are clear but slow when a
training set or a validation grid needs 1e5+ evaluations. This module
flattens an all-affine NNF tree into a small constraint *program*:

    leaf values   s = A x + b                      (P leaves)
    node values   v_j = min/max-smooth of children (K nodes, post-order)

Children of node j always precede j, so a single forward sweep over the
node table evaluates the tree; a reverse sweep propagates softmax
weights down to the leaves for gradients. Negations were folded into
the leaf rows at compile time (Not above an affine leaf just negates
the row), so the program only has And/Or nodes.

Every kernel has two interchangeable implementations: a numba @njit
loop over the batch and a vectorized pure-numpy fallback, selected via
accel.resolve_backend(). Trees with generic-smooth leaves cannot be
compiled; callers keep using the tree-walk evaluators for those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import constraints as C
from .accel import NUMBA_AVAILABLE, resolve_backend
from .errors import ConfigError, SamplingError

if NUMBA_AVAILABLE:
    from numba import njit
else:  # pragma: no cover - exercised only when numba is missing

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


_AND = 0
_OR = 1


@dataclass(frozen=True)
class CompiledConstraint:
    """Flattened all-affine NNF constraint tree.

    child_idx slots < n_leaves index leaf rows; slots >= n_leaves index
    node j = slot - n_leaves. The root is the last node (or leaf 0 when
    the tree is a single leaf and n_nodes == 0).
    """

    a_mat: np.ndarray  # (P, n) leaf gradients
    b_vec: np.ndarray  # (P,) leaf offsets
    node_kind: np.ndarray  # (K,) int64, 0 = and, 1 = or
    child_ptr: np.ndarray  # (K+1,) int64 prefix offsets into child_idx
    child_idx: np.ndarray  # (sum of arities,) int64
    log_m_sum: float  # sum over nodes of log(arity)

    @property
    def n_dim(self) -> int:
        return self.a_mat.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.a_mat.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.node_kind.shape[0]

    def gap_bound(self, beta: float) -> float:
        """Bound on c(x) - cbar(x); same quantity as constraints.gap_bound."""
        return self.log_m_sum / beta


def compile_constraint(expr: C.Expr, n_dim=None) -> CompiledConstraint:
    """Normalize to NNF and flatten. Raises ConfigError on generic leaves."""
    expr = C.normalize_nnf(expr)
    rows, offs = [], []
    kinds, ptrs, slots = [], [0], []

    def leaf_slot(e, negate):
        prim = e.prim
        if not prim.is_affine:
            raise ConfigError("cannot compile a tree with generic-smooth leaves")
        rows.append(-prim.a if negate else prim.a.copy())
        offs.append(-prim.b if negate else prim.b)
        return len(rows) - 1

    def walk(e):
        if e.op == C.LEAF:
            return ("leaf", leaf_slot(e, False))
        if e.op == C.NOT:
            return ("leaf", leaf_slot(e.children[0], True))
        child = [walk(c) for c in e.children]
        kinds.append(_AND if e.op == C.AND else _OR)
        slots.append(child)
        ptrs.append(ptrs[-1] + len(child))
        return ("node", len(kinds) - 1)

    root = walk(expr)
    P = len(rows)
    flat = np.empty(ptrs[-1], dtype=np.int64)
    pos = 0
    for child in slots:
        for tag, idx in child:
            flat[pos] = idx if tag == "leaf" else P + idx
            pos += 1

    a_mat = np.ascontiguousarray(np.stack(rows), dtype=np.float64)
    if n_dim is not None and a_mat.shape[1] != n_dim:
        raise ConfigError(
            f"constraint has {a_mat.shape[1]} state dims, expected {n_dim}"
        )
    log_m = sum(math.log(p) for p in np.diff(ptrs)) if kinds else 0.0
    if root[0] == "leaf" and kinds:  # root must be the last node when nodes exist
        raise ConfigError("malformed tree: root resolved to a leaf below nodes")
    return CompiledConstraint(
        a_mat=a_mat,
        b_vec=np.ascontiguousarray(offs, dtype=np.float64),
        node_kind=np.asarray(kinds, dtype=np.int64),
        child_ptr=np.asarray(ptrs, dtype=np.int64),
        child_idx=flat,
        log_m_sum=float(log_m),
    )


def _as_batch(X, n_dim):
    X = np.ascontiguousarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_dim:
        raise ValueError(f"expected states of dimension {n_dim}, got shape {X.shape}")
    return X, squeeze


# ---------------------------------------------------------------------------
# numba kernels (loop over the batch, scalar inner loops)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _leaf_values_nb(a_mat, b_vec, x, leafv):
    P, n = a_mat.shape
    for p in range(P):
        acc = b_vec[p]
        for d in range(n):
            acc += a_mat[p, d] * x[d]
        leafv[p] = acc


@njit(cache=True)
def _exact_single_nb(a_mat, b_vec, kind, ptr, cidx, x, leafv, nodev):
    _leaf_values_nb(a_mat, b_vec, x, leafv)
    P = a_mat.shape[0]
    K = kind.shape[0]
    for j in range(K):
        s0, s1 = ptr[j], ptr[j + 1]
        c = cidx[s0]
        v = leafv[c] if c < P else nodev[c - P]
        for s in range(s0 + 1, s1):
            c = cidx[s]
            cv = leafv[c] if c < P else nodev[c - P]
            if kind[j] == _AND:
                if cv < v:
                    v = cv
            else:
                if cv > v:
                    v = cv
        nodev[j] = v
    return nodev[K - 1] if K > 0 else leafv[0]


@njit(cache=True)
def _smooth_single_nb(a_mat, b_vec, kind, ptr, cidx, beta, x, leafv, nodev):
    _leaf_values_nb(a_mat, b_vec, x, leafv)
    P = a_mat.shape[0]
    K = kind.shape[0]
    for j in range(K):
        s0, s1 = ptr[j], ptr[j + 1]
        sign = 1.0 if kind[j] == _OR else -1.0
        m = -np.inf
        for s in range(s0, s1):
            c = cidx[s]
            cv = leafv[c] if c < P else nodev[c - P]
            z = sign * beta * cv
            if z > m:
                m = z
        tot = 0.0
        for s in range(s0, s1):
            c = cidx[s]
            cv = leafv[c] if c < P else nodev[c - P]
            tot += np.exp(sign * beta * cv - m)
        lse = m + np.log(tot)
        if kind[j] == _OR:
            nodev[j] = (lse - np.log(s1 - s0)) / beta
        else:
            nodev[j] = -lse / beta
    return nodev[K - 1] if K > 0 else leafv[0]


@njit(cache=True)
def _exact_batch_nb(a_mat, b_vec, kind, ptr, cidx, X, out):
    leafv = np.empty(a_mat.shape[0])
    nodev = np.empty(max(kind.shape[0], 1))
    for i in range(X.shape[0]):
        out[i] = _exact_single_nb(a_mat, b_vec, kind, ptr, cidx, X[i], leafv, nodev)


@njit(cache=True)
def _smooth_batch_nb(a_mat, b_vec, kind, ptr, cidx, beta, X, out):
    leafv = np.empty(a_mat.shape[0])
    nodev = np.empty(max(kind.shape[0], 1))
    for i in range(X.shape[0]):
        out[i] = _smooth_single_nb(
            a_mat, b_vec, kind, ptr, cidx, beta, X[i], leafv, nodev
        )


@njit(cache=True)
def _smooth_grad_batch_nb(a_mat, b_vec, kind, ptr, cidx, beta, X, val, grad):
    P, n = a_mat.shape
    K = kind.shape[0]
    leafv = np.empty(P)
    nodev = np.empty(max(K, 1))
    leafw = np.empty(P)
    nodew = np.empty(max(K, 1))
    for i in range(X.shape[0]):
        val[i] = _smooth_single_nb(
            a_mat, b_vec, kind, ptr, cidx, beta, X[i], leafv, nodev
        )
        if K == 0:
            for d in range(n):
                grad[i, d] = a_mat[0, d]
            continue
        for p in range(P):
            leafw[p] = 0.0
        for j in range(K - 1):
            nodew[j] = 0.0
        nodew[K - 1] = 1.0
        for j in range(K - 1, -1, -1):
            s0, s1 = ptr[j], ptr[j + 1]
            sign = 1.0 if kind[j] == _OR else -1.0
            m = -np.inf
            for s in range(s0, s1):
                c = cidx[s]
                cv = leafv[c] if c < P else nodev[c - P]
                z = sign * beta * cv
                if z > m:
                    m = z
            tot = 0.0
            for s in range(s0, s1):
                c = cidx[s]
                cv = leafv[c] if c < P else nodev[c - P]
                tot += np.exp(sign * beta * cv - m)
            wj = nodew[j]
            for s in range(s0, s1):
                c = cidx[s]
                cv = leafv[c] if c < P else nodev[c - P]
                wc = wj * np.exp(sign * beta * cv - m) / tot
                if c < P:
                    leafw[c] += wc
                else:
                    nodew[c - P] += wc
        for d in range(n):
            acc = 0.0
            for p in range(P):
                acc += leafw[p] * a_mat[p, d]
            grad[i, d] = acc


@njit(cache=True)
def _rwmh_chain_nb(
    a_mat, b_vec, kind, ptr, cidx, beta, lo, hi, x0, steps, burn, thin, out
):
    n = x0.shape[0]
    leafv = np.empty(a_mat.shape[0])
    nodev = np.empty(max(kind.shape[0], 1))
    x = x0.copy()
    y = np.empty(n)
    total = steps.shape[0]
    accepted = 0
    rec = 0
    for t in range(total):
        inside = True
        for d in range(n):
            y[d] = x[d] + steps[t, d]
            if y[d] < lo[d] or y[d] > hi[d]:
                inside = False
        if inside:
            v = _smooth_single_nb(a_mat, b_vec, kind, ptr, cidx, beta, y, leafv, nodev)
            if v >= 0.0:
                for d in range(n):
                    x[d] = y[d]
                accepted += 1
        if t >= burn and (t - burn) % thin == thin - 1:
            for d in range(n):
                out[rec, d] = x[d]
            rec += 1
    return accepted


# ---------------------------------------------------------------------------
# pure-numpy fallbacks (vectorized over the batch)
# ---------------------------------------------------------------------------


def _node_forward_np(cc, s, smooth, beta):
    """Forward sweep over the node table. s is (B, P) leaf values."""
    B = s.shape[0]
    K = cc.n_nodes
    nodev = np.empty((B, K))
    P = cc.n_leaves
    for j in range(K):
        idx = cc.child_idx[cc.child_ptr[j] : cc.child_ptr[j + 1]]
        cols = [s[:, c] if c < P else nodev[:, c - P] for c in idx]
        V = np.stack(cols, axis=1)
        if not smooth:
            nodev[:, j] = V.min(axis=1) if cc.node_kind[j] == _AND else V.max(axis=1)
            continue
        sign = 1.0 if cc.node_kind[j] == _OR else -1.0
        z = sign * beta * V
        m = z.max(axis=1)
        lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
        if cc.node_kind[j] == _OR:
            nodev[:, j] = (lse - math.log(len(idx))) / beta
        else:
            nodev[:, j] = -lse / beta
    return nodev


def _exact_batch_np(cc, X):
    s = X @ cc.a_mat.T + cc.b_vec
    if cc.n_nodes == 0:
        return s[:, 0].copy()
    return _node_forward_np(cc, s, smooth=False, beta=0.0)[:, -1]


def _smooth_batch_np(cc, X, beta):
    s = X @ cc.a_mat.T + cc.b_vec
    if cc.n_nodes == 0:
        return s[:, 0].copy()
    return _node_forward_np(cc, s, smooth=True, beta=beta)[:, -1]


def _smooth_grad_batch_np(cc, X, beta):
    B = X.shape[0]
    P, K = cc.n_leaves, cc.n_nodes
    s = X @ cc.a_mat.T + cc.b_vec
    if K == 0:
        return s[:, 0].copy(), np.tile(cc.a_mat[0], (B, 1))
    nodev = _node_forward_np(cc, s, smooth=True, beta=beta)
    leafw = np.zeros((B, P))
    nodew = np.zeros((B, K))
    nodew[:, K - 1] = 1.0
    for j in range(K - 1, -1, -1):
        idx = cc.child_idx[cc.child_ptr[j] : cc.child_ptr[j + 1]]
        cols = [s[:, c] if c < P else nodev[:, c - P] for c in idx]
        V = np.stack(cols, axis=1)
        sign = 1.0 if cc.node_kind[j] == _OR else -1.0
        z = sign * beta * V
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        w = e / e.sum(axis=1, keepdims=True) * nodew[:, j : j + 1]
        for k, c in enumerate(idx):
            if c < P:
                leafw[:, c] += w[:, k]
            else:
                nodew[:, c - P] += w[:, k]
    return nodev[:, -1].copy(), leafw @ cc.a_mat


def _smooth_single_np(cc, beta, x):
    s = cc.a_mat @ x + cc.b_vec
    K = cc.n_nodes
    if K == 0:
        return float(s[0])
    nodev = np.empty(K)
    P = cc.n_leaves
    for j in range(K):
        idx = cc.child_idx[cc.child_ptr[j] : cc.child_ptr[j + 1]]
        vals = np.array([s[c] if c < P else nodev[c - P] for c in idx])
        sign = 1.0 if cc.node_kind[j] == _OR else -1.0
        z = sign * beta * vals
        m = z.max()
        lse = m + math.log(float(np.exp(z - m).sum()))
        nodev[j] = (lse - math.log(len(idx))) / beta if sign > 0 else -lse / beta
    return float(nodev[K - 1])


def _rwmh_chain_np(cc, beta, lo, hi, x0, steps, burn, thin, out):
    x = x0.copy()
    accepted = 0
    rec = 0
    thin_m1 = thin - 1
    for t in range(steps.shape[0]):
        y = x + steps[t]
        if np.all(y >= lo) and np.all(y <= hi):
            if _smooth_single_np(cc, beta, y) >= 0.0:
                x = y
                accepted += 1
        if t >= burn and (t - burn) % thin == thin_m1:
            out[rec] = x
            rec += 1
    return accepted


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------


def batch_exact(cc: CompiledConstraint, X, backend=None):
    """Exact level values c(x) for a batch of states."""
    X, squeeze = _as_batch(X, cc.n_dim)
    if resolve_backend(backend) == "numba":
        out = np.empty(X.shape[0])
        _exact_batch_nb(
            cc.a_mat, cc.b_vec, cc.node_kind, cc.child_ptr, cc.child_idx, X, out
        )
    else:
        out = _exact_batch_np(cc, X)
    return float(out[0]) if squeeze else out


def batch_smooth(cc: CompiledConstraint, X, beta, backend=None):
    """Smooth minorizer values cbar(x) for a batch of states."""
    X, squeeze = _as_batch(X, cc.n_dim)
    if resolve_backend(backend) == "numba":
        out = np.empty(X.shape[0])
        _smooth_batch_nb(
            cc.a_mat,
            cc.b_vec,
            cc.node_kind,
            cc.child_ptr,
            cc.child_idx,
            float(beta),
            X,
            out,
        )
    else:
        out = _smooth_batch_np(cc, X, float(beta))
    return float(out[0]) if squeeze else out


def batch_smooth_grad(cc: CompiledConstraint, X, beta, backend=None):
    """(cbar(x), d cbar/dx) for a batch; gradient rows are convex
    combinations of leaf rows."""
    X, squeeze = _as_batch(X, cc.n_dim)
    if resolve_backend(backend) == "numba":
        val = np.empty(X.shape[0])
        grad = np.empty_like(X)
        _smooth_grad_batch_nb(
            cc.a_mat,
            cc.b_vec,
            cc.node_kind,
            cc.child_ptr,
            cc.child_idx,
            float(beta),
            X,
            val,
            grad,
        )
    else:
        val, grad = _smooth_grad_batch_np(cc, X, float(beta))
    if squeeze:
        return float(val[0]), grad[0]
    return val, grad


def rwmh_chain(
    cc: CompiledConstraint,
    beta: float,
    lo,
    hi,
    x0,
    steps,
    burn: int,
    thin: int,
    backend=None,
):
    """Random-walk Metropolis over the uniform law on {x in box: cbar >= 0}.

    The target is an indicator, so the Metropolis ratio is 1 inside and
    0 outside: a proposal is accepted iff it stays in the box and keeps
    cbar >= 0. `steps` holds the pre-drawn Gaussian increments, one row
    per iteration, which makes the chain a pure function of its inputs
    (and identical across backends). Records every `thin`-th state
    after `burn` iterations: len(steps) must equal burn + count * thin.
    """
    lo = np.ascontiguousarray(lo, dtype=np.float64)
    hi = np.ascontiguousarray(hi, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    steps = np.ascontiguousarray(steps, dtype=np.float64)
    if burn < 0 or thin < 1:
        raise ValueError(f"need burn >= 0 and thin >= 1, got {burn}, {thin}")
    total = steps.shape[0]
    if (total - burn) % thin != 0:
        raise ValueError(
            f"len(steps)={total} is not burn + count*thin for burn={burn}, thin={thin}"
        )
    count = (total - burn) // thin
    if np.any(x0 < lo) or np.any(x0 > hi) or batch_smooth(cc, x0, beta, backend) < 0:
        raise SamplingError("chain start is not a feasible in-box state")
    out = np.empty((count, cc.n_dim))
    if resolve_backend(backend) == "numba":
        accepted = _rwmh_chain_nb(
            cc.a_mat,
            cc.b_vec,
            cc.node_kind,
            cc.child_ptr,
            cc.child_idx,
            float(beta),
            lo,
            hi,
            x0,
            steps,
            burn,
            thin,
            out,
        )
    else:
        accepted = _rwmh_chain_np(cc, float(beta), lo, hi, x0, steps, burn, thin, out)
    return out, int(accepted)
