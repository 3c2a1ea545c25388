"""Boolean constraint algebra with smooth inner approximation.

A safe set is described by a Boolean tree over scalar primitive
constraints s_i(x) >= 0. The tree evaluates two ways:

* exact:  And -> pointwise min, Or -> pointwise max, Not -> sign flip.
  c(x) >= 0 iff x is in the described set.
* smooth: each min/max is replaced by its log-sum-exp lower bound with
  sharpness beta, giving a continuously differentiable minorizer
  cbar(x) <= c(x). The zero superlevel set of cbar is therefore an
  inner approximation of the safe set, shrinking as beta decreases.

Smoothing composes one bound direction per node, so negation must sit
directly above leaves: call normalize_nnf() before smooth evaluation.

The functions here are single-state reference implementations (they
also serve as oracles for the batched kernels in kernels.py). They are
pure and safe to call concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError

LEAF = "leaf"
AND = "and"
OR = "or"
NOT = "not"


class Primitive:
    """One scalar constraint s(x) >= 0.

    Either affine, s(x) = a @ x + b, or generic-smooth via an evaluator
    fn(x) -> (value, gradient). Generic primitives must be continuously
    differentiable on the domain of interest; affine ones trivially are.
    """

    __slots__ = ("a", "b", "fn", "name")

    def __init__(self, a=None, b=0.0, fn=None, name=""):
        if (a is None) == (fn is None):
            raise ConfigError("Primitive needs exactly one of (a, b) or fn")
        self.a = None if a is None else np.asarray(a, dtype=float)
        self.b = float(b)
        self.fn = fn
        self.name = name

    @property
    def is_affine(self) -> bool:
        return self.fn is None

    def value(self, x) -> float:
        if self.is_affine:
            return float(self.a @ np.asarray(x, dtype=float) + self.b)
        return float(self.fn(np.asarray(x, dtype=float))[0])

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_affine:
            return float(self.a @ x + self.b), self.a.copy()
        v, g = self.fn(x)
        return float(v), np.asarray(g, dtype=float)


@dataclass(frozen=True, eq=False)
class Expr:
    """Node of a Boolean constraint tree."""

    op: str
    prim: Optional[Primitive] = None
    children: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.op == LEAF:
            if self.prim is None or self.children:
                raise ConfigError("leaf node must carry a primitive and no children")
        elif self.op in (AND, OR):
            if self.prim is not None or len(self.children) < 1:
                raise ConfigError(f"{self.op} node needs >= 1 children and no primitive")
        elif self.op == NOT:
            if self.prim is not None or len(self.children) != 1:
                raise ConfigError("not node needs exactly one child")
        else:
            raise ConfigError(f"unknown node op {self.op!r}")

    # operator sugar; & and | merge like-op children so gap bounds stay flat
    def __and__(self, other: "Expr") -> "Expr":
        return conj(self, other)

    def __or__(self, other: "Expr") -> "Expr":
        return disj(self, other)

    def __invert__(self) -> "Expr":
        return neg(self)


def leaf(a, b=0.0, name="") -> Expr:
    """Affine primitive leaf s(x) = a @ x + b."""
    return Expr(LEAF, prim=Primitive(a=a, b=b, name=name))


def generic_leaf(fn, name="") -> Expr:
    """Leaf with a generic smooth evaluator fn(x) -> (value, grad)."""
    return Expr(LEAF, prim=Primitive(fn=fn, name=name))


def _merge(op: str, items: Sequence[Expr]) -> tuple:
    out = []
    for e in items:
        if e.op == op:
            out.extend(e.children)
        else:
            out.append(e)
    return tuple(out)


def conj(*children: Expr) -> Expr:
    """Intersection (pointwise min). Adjacent And children are flattened."""
    return Expr(AND, children=_merge(AND, children))


def disj(*children: Expr) -> Expr:
    """Union (pointwise max). Adjacent Or children are flattened."""
    return Expr(OR, children=_merge(OR, children))


def neg(child: Expr) -> Expr:
    return Expr(NOT, children=(child,))


@dataclass(frozen=True)
class SmoothingConfig:
    """Sharpness of the log-sum-exp bounds; larger beta = tighter."""

    beta: float = 10.0

    def __post_init__(self):
        if not (self.beta > 0):
            raise ConfigError(f"beta must be > 0, got {self.beta}")


def normalize_nnf(expr: Expr) -> Expr:
    """Push negation to the leaves (De Morgan) and drop double negations.

    The result is semantically equivalent and has Not only directly
    above Leaf nodes, which is what smooth evaluation requires.
    """
    if expr.op == LEAF:
        return expr
    if expr.op == AND:
        return Expr(AND, children=tuple(normalize_nnf(c) for c in expr.children))
    if expr.op == OR:
        return Expr(OR, children=tuple(normalize_nnf(c) for c in expr.children))
    # expr.op == NOT
    child = expr.children[0]
    if child.op == LEAF:
        return expr
    if child.op == NOT:
        return normalize_nnf(child.children[0])
    flipped = OR if child.op == AND else AND
    return Expr(flipped, children=tuple(normalize_nnf(neg(c)) for c in child.children))


def is_nnf(expr: Expr) -> bool:
    if expr.op == LEAF:
        return True
    if expr.op == NOT:
        return expr.children[0].op == LEAF
    return all(is_nnf(c) for c in expr.children)


def _require_nnf(expr: Expr):
    if not is_nnf(expr):
        raise ConfigError(
            "expression is not in negation normal form; call normalize_nnf() first"
        )


def eval_exact(expr: Expr, x) -> float:
    """Exact level function: min/max/negate recursion.

    Total on any well-formed tree (negation of internal nodes is fine
    here; only smoothing needs normal form). c(x) >= 0 iff x belongs to
    the described set.
    """
    if expr.op == LEAF:
        return expr.prim.value(x)
    if expr.op == NOT:
        return -eval_exact(expr.children[0], x)
    vals = [eval_exact(c, x) for c in expr.children]
    return min(vals) if expr.op == AND else max(vals)


def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


def eval_smooth(expr: Expr, x, cfg: SmoothingConfig) -> float:
    """Smooth minorizer cbar(x) <= c(x).

    Or node over child values s_1..s_M:  (1/beta) log(sum exp(beta s_i)) - log(M)/beta
    And node:                            -(1/beta) log(sum exp(-beta s_i))
    Leaf / Not-Leaf: exact value.

    Both replacements lower-bound the exact max/min, and both are
    strictly increasing in each input, so the bound survives
    composition. Log-sum-exp is computed with max subtraction: beta*s
    can exceed the double-precision exp range.
    """
    _require_nnf(expr)
    return _smooth_value(expr, np.asarray(x, dtype=float), cfg.beta)


def _smooth_value(expr: Expr, x: np.ndarray, beta: float) -> float:
    if expr.op == LEAF:
        return expr.prim.value(x)
    if expr.op == NOT:
        return -expr.children[0].prim.value(x)
    vals = np.array([_smooth_value(c, x, beta) for c in expr.children])
    if expr.op == OR:
        return (_logsumexp(beta * vals) - math.log(len(vals))) / beta
    return -_logsumexp(-beta * vals) / beta


def grad_smooth(expr: Expr, x, cfg: SmoothingConfig) -> np.ndarray:
    """Exact gradient of the smooth minorizer.

    Each node's gradient is the softmax-weighted combination of its
    children's gradients (weights exp(+-beta s_i), normalized), so the
    result is always a convex combination of leaf gradients.
    """
    _require_nnf(expr)
    x = np.asarray(x, dtype=float)
    _, g = _smooth_value_grad(expr, x, cfg.beta)
    return g


def _smooth_value_grad(expr: Expr, x: np.ndarray, beta: float):
    if expr.op == LEAF:
        return expr.prim.value_and_grad(x)
    if expr.op == NOT:
        v, g = expr.children[0].prim.value_and_grad(x)
        return -v, -g
    pairs = [_smooth_value_grad(c, x, beta) for c in expr.children]
    vals = np.array([p[0] for p in pairs])
    sign = 1.0 if expr.op == OR else -1.0
    z = sign * beta * vals
    m = float(np.max(z))
    e = np.exp(z - m)
    w = e / float(np.sum(e))
    grad = np.zeros_like(x)
    for wi, (_, gi) in zip(w, pairs):
        grad += wi * gi
    lse = m + math.log(float(np.sum(e)))
    if expr.op == OR:
        value = (lse - math.log(len(vals))) / beta
    else:
        value = -lse / beta
    return value, grad


def gap_bound(expr: Expr, cfg: SmoothingConfig) -> float:
    """Conservative bound on c(x) - cbar(x), valid for every x.

    Each internal node's log-sum-exp is within log(M)/beta of the exact
    min/max, and min/max are 1-Lipschitz in the sup norm of their
    inputs, so per-node errors add along the tree.
    """
    _require_nnf(expr)
    return _gap(expr, cfg.beta)


def _gap(expr: Expr, beta: float) -> float:
    if expr.op in (LEAF, NOT):
        return 0.0
    own = math.log(len(expr.children)) / beta
    return own + sum(_gap(c, beta) for c in expr.children)


def count_primitives(expr: Expr) -> int:
    if expr.op == LEAF:
        return 1
    return sum(count_primitives(c) for c in expr.children)


# ---------------------------------------------------------------------------
# JSON serialization. Schema:
#   {"node": "or"|"and"|"not"|"leaf", "children": [...],
#    "affine": {"a": [...], "b": ...}}
# Generic-smooth leaves carry arbitrary callables and cannot be serialized.
# ---------------------------------------------------------------------------


def expr_to_dict(expr: Expr) -> dict:
    if expr.op == LEAF:
        if not expr.prim.is_affine:
            raise ConfigError("generic-smooth leaves cannot be serialized to JSON")
        return {
            "node": LEAF,
            "affine": {"a": [float(v) for v in expr.prim.a], "b": expr.prim.b},
        }
    return {"node": expr.op, "children": [expr_to_dict(c) for c in expr.children]}


def expr_from_dict(doc: dict) -> Expr:
    try:
        op = doc["node"]
    except (TypeError, KeyError):
        raise ConfigError("constraint document must be an object with a 'node' key")
    if op == LEAF:
        aff = doc.get("affine")
        if not isinstance(aff, dict) or "a" not in aff or "b" not in aff:
            raise ConfigError("leaf node needs an 'affine' object with 'a' and 'b'")
        return leaf(np.asarray(aff["a"], dtype=float), float(aff["b"]))
    if op in (AND, OR, NOT):
        kids = doc.get("children")
        if not isinstance(kids, list) or not kids:
            raise ConfigError(f"{op} node needs a non-empty 'children' list")
        return Expr(op, children=tuple(expr_from_dict(k) for k in kids))
    raise ConfigError(f"unknown node kind {op!r}")


def expr_to_json(expr: Expr, indent=None) -> str:
    return json.dumps(expr_to_dict(expr), indent=indent)


def expr_from_json(text: str) -> Expr:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid constraint JSON: {e}") from e
    return expr_from_dict(doc)


def save_expr(expr: Expr, path):
    with open(path, "w") as f:
        f.write(expr_to_json(expr, indent=2))
        f.write("\n")


def load_expr(path) -> Expr:
    with open(path) as f:
        return expr_from_json(f.read())


# ---------------------------------------------------------------------------
# Geometry builders. All return the SAFE-side constraint (>= 0 outside the
# obstacle / inside the wall interior) as flat trees of affine leaves.
# ---------------------------------------------------------------------------


def _axis_vec(n: int, d: int, v: float) -> np.ndarray:
    a = np.zeros(n)
    a[d] = v
    return a


def rect_complement(lo, hi, n=None, dims=None) -> Expr:
    """Safe outside the axis-aligned box lo <= x_dims <= hi.

    The complement of a box is the union of its 2k face half-spaces:
    Or over dims d of (x_d - hi_d >= 0) and (lo_d - x_d >= 0).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if dims is None:
        dims = list(range(lo.size))
    if n is None:
        n = len(dims)
    if np.any(lo >= hi):
        raise ConfigError("rectangle needs lo < hi componentwise")
    faces = []
    for k, d in enumerate(dims):
        faces.append(leaf(_axis_vec(n, d, 1.0), -hi[k]))
        faces.append(leaf(_axis_vec(n, d, -1.0), lo[k]))
    return disj(*faces)


def rotated_rect_complement(center, half_sizes, angle, n=2, dims=(0, 1)) -> Expr:
    """Safe outside a rectangle rotated by `angle` (radians) in the
    (dims[0], dims[1]) plane.

    In the rotated frame y = R^T (x - center) the box is |y_i| <= half_i,
    so each face is affine in x with normal +-(column of R).
    """
    cx, cy = float(center[0]), float(center[1])
    hx, hy = float(half_sizes[0]), float(half_sizes[1])
    if hx <= 0 or hy <= 0:
        raise ConfigError("half_sizes must be positive")
    c, s = math.cos(angle), math.sin(angle)
    d0, d1 = dims
    # rows of R^T: e0 = (c, s), e1 = (-s, c)
    axes = [((c, s), hx), ((-s, c), hy)]
    faces = []
    for (ux, uy), h in axes:
        a = np.zeros(n)
        a[d0], a[d1] = ux, uy
        off = ux * cx + uy * cy
        # y_i - h >= 0  and  -y_i - h >= 0
        faces.append(leaf(a.copy(), -off - h))
        faces.append(leaf(-a, off - h))
    return disj(*faces)


def box_interior(lo, hi, dims=None) -> Expr:
    """Safe inside the axis-aligned box lo <= x_dims <= hi."""
    return wall_interior(lo, hi, thickness=0.0, dims=dims)


def wall_interior(domain_lo, domain_hi, thickness=1.0, dims=None) -> Expr:
    """Safe inside the domain box inset by wall bands of given thickness.

    Models obstacles of the given thickness lining the domain boundary:
    And over dims d of (x_d - (lo_d + t) >= 0) and ((hi_d - t) - x_d >= 0).
    """
    lo = np.asarray(domain_lo, dtype=float)
    hi = np.asarray(domain_hi, dtype=float)
    n = lo.size
    if dims is None:
        dims = list(range(n))
    t = float(thickness)
    faces = []
    for d in dims:
        if hi[d] - lo[d] <= 2 * t:
            raise ConfigError(f"walls of thickness {t} leave no interior on dim {d}")
        faces.append(leaf(_axis_vec(n, d, 1.0), -(lo[d] + t)))
        faces.append(leaf(_axis_vec(n, d, -1.0), hi[d] - t))
    return conj(*faces)
