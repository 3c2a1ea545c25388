"""Training/validation state samplers.

Three provenances, all deterministic per seed:

* uniform:   i.i.d. over the domain box (the paper's non-IS baseline).
* rejection: uniform over L_0^+(cbar) by envelope rejection; exact but
  wasteful when the feasible volume fraction is small.
* rwmh:      random-walk Metropolis targeting the same uniform law.
  The target density is an indicator, so the accept rule degenerates
  to "proposal stays in the box with cbar >= 0". All Gaussian
  increments are drawn up front from the seeded generator; the chain
  itself (kernels.rwmh_chain) is then a pure function of its inputs.

Restricting training data to L_0^+(cbar) is what the ablation tables
call intelligent sampling (IS): no learning is spent inside obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import constraints as C
from . import kernels as K
from .errors import ConfigError, SamplingError

_CHUNK = 8192


@dataclass(frozen=True)
class SampleSet:
    """States plus how they were produced."""

    states: np.ndarray  # (N, n)
    provenance: str  # uniform | rejection | rwmh
    seed: int

    def __len__(self) -> int:
        return self.states.shape[0]


def _check_box(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi):
        raise ConfigError(f"invalid box: lo={lo}, hi={hi}")
    return lo, hi


def _smooth_values(expr, cfg, X, backend=None):
    """cbar over a batch; compiled when affine, tree-walk otherwise."""
    try:
        cc = K.compile_constraint(C.normalize_nnf(expr))
    except ConfigError:
        nf = C.normalize_nnf(expr)
        return np.array([C.eval_smooth(nf, x, cfg) for x in X])
    return K.batch_smooth(cc, X, cfg.beta, backend=backend)


def uniform_box(lo, hi, count, seed) -> SampleSet:
    """i.i.d. uniform over the box."""
    lo, hi = _check_box(lo, hi)
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    states = rng.uniform(lo, hi, size=(int(count), lo.size))
    return SampleSet(states=states, provenance="uniform", seed=int(seed))


def rejection_sample(
    expr,
    cfg: C.SmoothingConfig,
    lo,
    hi,
    count,
    seed,
    max_attempts_per_sample: int = 1000,
    backend=None,
) -> SampleSet:
    """count i.i.d. uniform draws from {x in box : cbar(x) >= 0}."""
    lo, hi = _check_box(lo, hi)
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    budget = int(count) * int(max_attempts_per_sample)
    kept, accepted, attempts = [], 0, 0
    while accepted < count:
        if attempts >= budget:
            rate = accepted / max(attempts, 1)
            raise SamplingError(
                f"rejection acceptance rate {rate:.3e} fell below "
                f"1/max_attempts_per_sample = {1.0 / max_attempts_per_sample:.3e} "
                f"({accepted}/{count} accepted after {attempts} draws); "
                "the feasible region is too thin for envelope rejection"
            )
        n_draw = min(_CHUNK, budget - attempts)
        X = rng.uniform(lo, hi, size=(n_draw, lo.size))
        attempts += n_draw
        ok = _smooth_values(expr, cfg, X, backend=backend) >= 0.0
        if np.any(ok):
            kept.append(X[ok])
            accepted += int(ok.sum())
    states = np.concatenate(kept)[: int(count)]
    return SampleSet(states=states, provenance="rejection", seed=int(seed))


def rwmh_sample(
    expr,
    cfg: C.SmoothingConfig,
    lo,
    hi,
    count,
    seed,
    step_scale: float = 0.05,
    burn_in: int = 1000,
    thinning: int = 5,
    backend=None,
) -> SampleSet:
    """count RWMH samples targeting the uniform law on L_0^+(cbar).

    Per-dimension proposal scale is step_scale x box width. The chain
    start is found by rejection from the same generator, then the full
    increment table is drawn, so the whole run is one deterministic
    function of the seed.
    """
    lo, hi = _check_box(lo, hi)
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if not (step_scale > 0) or burn_in < 0 or thinning < 1:
        raise ConfigError(
            f"need step_scale > 0, burn_in >= 0, thinning >= 1; got "
            f"{step_scale}, {burn_in}, {thinning}"
        )
    try:
        cc = K.compile_constraint(C.normalize_nnf(expr))
    except ConfigError as err:
        raise ConfigError(
            "rwmh sampling needs a compilable (all-affine) constraint tree"
        ) from err
    rng = np.random.default_rng(seed)

    # bounded search for a feasible chain seed
    x0 = None
    for _ in range(64):
        X = rng.uniform(lo, hi, size=(_CHUNK, lo.size))
        ok = K.batch_smooth(cc, X, cfg.beta, backend=backend) >= 0.0
        if np.any(ok):
            x0 = X[np.argmax(ok)]
            break
    if x0 is None:
        raise SamplingError(
            f"no feasible chain seed among {64 * _CHUNK} uniform draws; "
            "L_0^+(cbar) appears to have vanishing volume"
        )

    total = int(burn_in) + int(count) * int(thinning)
    steps = rng.normal(size=(total, lo.size)) * (step_scale * (hi - lo))
    states, _ = K.rwmh_chain(
        cc, cfg.beta, lo, hi, x0, steps, int(burn_in), int(thinning), backend=backend
    )
    return SampleSet(states=states, provenance="rwmh", seed=int(seed))


def save_samples(samples: SampleSet, path):
    """One state per row; header x_1..x_n plus provenance comment."""
    n = samples.states.shape[1]
    header = ",".join(f"x_{i + 1}" for i in range(n))
    with open(path, "w") as f:
        f.write(f"# provenance={samples.provenance} seed={samples.seed}\n")
        f.write(header + "\n")
        for row in samples.states:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_samples(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)


def histogram_tv(states_a, states_b, lo, hi, bins=12, dims=(0, 1)) -> float:
    """Total-variation distance between two sample sets on a coarse 2-D
    grid: TV = (1/2) sum |p_k - q_k| over bins x bins cells."""
    lo, hi = _check_box(lo, hi)
    d0, d1 = dims
    edges0 = np.linspace(lo[d0], hi[d0], bins + 1)
    edges1 = np.linspace(lo[d1], hi[d1], bins + 1)

    def _hist(S):
        Hc, _, _ = np.histogram2d(S[:, d0], S[:, d1], bins=[edges0, edges1])
        return Hc / Hc.sum()

    return 0.5 * float(np.abs(_hist(np.asarray(states_a)) - _hist(np.asarray(states_b))).sum())
