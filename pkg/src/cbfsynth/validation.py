"""Checkpoint validation: the three table metrics and ablation tables.

For a trained candidate h = cbar - delta the quality summary is

* mean |N(h, cbar)| over the smoothed-safe points (PDE residual),
* mean L_CBF over the same points (barrier-condition violation),
* volume ratio #{cbar >= 0 and h >= 0} / #{cbar >= 0}: how much of the
  smooth inner approximation the learned invariant set keeps.

Numerator and denominator of the ratio share one sample set, so the
common Monte Carlo noise cancels. Points outside L_0^+(cbar) never
enter the means. Evaluation sets are either an axis-aligned grid over
the domain box (the double-integrator setup) or a seeded uniform draw
(the only option that scales to the plane's 7-D box).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import dynamics as D
from . import hjloss as HJ
from . import trainer as T
from .errors import ConfigError, SamplingError

__all__ = [
    "EvalSpec",
    "MetricsReport",
    "eval_points",
    "evaluate",
    "AblationTable",
    "ablation_table",
]

_CHUNK = 200_000


@dataclass(frozen=True)
class EvalSpec:
    """Where to evaluate: grid(dims) or monte_carlo(count, seed)."""

    kind: str
    dims: Tuple[int, ...] = ()
    count: int = 0
    seed: int = 0

    @staticmethod
    def grid(*dims) -> "EvalSpec":
        dims = tuple(int(d) for d in dims)
        if len(dims) == 0 or any(d < 2 for d in dims):
            raise ConfigError(f"grid dims must all be >= 2, got {dims}")
        return EvalSpec(kind="grid", dims=dims)

    @staticmethod
    def monte_carlo(count: int, seed: int = 0) -> "EvalSpec":
        if count < 1:
            raise ConfigError(f"monte_carlo count must be >= 1, got {count}")
        return EvalSpec(kind="monte_carlo", count=int(count), seed=int(seed))

    def describe(self) -> dict:
        if self.kind == "grid":
            return {"kind": "grid", "dims": list(self.dims)}
        return {"kind": "monte_carlo", "count": self.count, "seed": self.seed}


def eval_points(spec: EvalSpec, system: D.SystemSpec) -> np.ndarray:
    """Materialize the evaluation states for a system's domain box."""
    lo, hi = system.domain_lo, system.domain_hi
    n = system.state_dim
    if spec.kind == "grid":
        if len(spec.dims) != n:
            raise ConfigError(
                f"grid has {len(spec.dims)} dims, system {system.name!r} has {n}"
            )
        axes = [np.linspace(lo[i], hi[i], spec.dims[i]) for i in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    if spec.kind == "monte_carlo":
        rng = np.random.default_rng(spec.seed)
        return rng.uniform(lo, hi, size=(spec.count, n))
    raise ConfigError(f"unknown eval spec kind {spec.kind!r}")


@dataclass(frozen=True)
class MetricsReport:
    """The three table metrics plus provenance of how they were computed."""

    mean_abs_residual: float
    mean_loss_cbf: float
    volume_ratio: float
    n_points: int
    n_safe: int
    n_invariant: int
    eval_spec: dict
    checkpoint_digest: str

    def to_dict(self) -> dict:
        return {
            "mean_abs_residual": self.mean_abs_residual,
            "mean_loss_cbf": self.mean_loss_cbf,
            "volume_ratio": self.volume_ratio,
            "n_points": self.n_points,
            "n_safe": self.n_safe,
            "n_invariant": self.n_invariant,
            "eval_spec": self.eval_spec,
            "checkpoint_digest": self.checkpoint_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def evaluate(checkpoint: dict, spec: EvalSpec, backend=None) -> MetricsReport:
    """MetricsReport for one checkpoint document on one eval set."""
    model, config = T.model_from_checkpoint(checkpoint)
    system = D.by_name(config.system, **config.system_params)
    hyper = HJ.LossHyper(gamma=config.gamma, lam=config.lam)
    P = eval_points(spec, system)

    h_parts, resid_parts, lcbf_parts, cbar_parts = [], [], [], []
    for start in range(0, P.shape[0], _CHUNK):
        ev = HJ.batch_eval(system, model, P[start : start + _CHUNK], hyper,
                           backend=backend)
        h_parts.append(ev.h)
        resid_parts.append(ev.resid)
        lcbf_parts.append(ev.l_cbf)
        cbar_parts.append(ev.cbar)
    h = np.concatenate(h_parts)
    resid = np.concatenate(resid_parts)
    l_cbf = np.concatenate(lcbf_parts)
    cbar = np.concatenate(cbar_parts)

    safe = cbar >= 0.0
    n_safe = int(np.count_nonzero(safe))
    if n_safe == 0:
        raise SamplingError(
            "no evaluation points with cbar >= 0; the smoothed safe set "
            "misses this eval set entirely"
        )
    inv = safe & (h >= 0.0)
    report = MetricsReport(
        mean_abs_residual=float(np.mean(np.abs(resid[safe]))),
        mean_loss_cbf=float(np.mean(l_cbf[safe])),
        volume_ratio=float(np.count_nonzero(inv) / n_safe),
        n_points=int(P.shape[0]),
        n_safe=n_safe,
        n_invariant=int(np.count_nonzero(inv)),
        eval_spec=spec.describe(),
        checkpoint_digest=T.checkpoint_digest(checkpoint),
    )
    if not (np.isfinite(report.mean_abs_residual) and np.isfinite(report.mean_loss_cbf)):
        raise ConfigError("non-finite metrics; checkpoint parameters are corrupt")
    return report


# ---------------------------------------------------------------------------
# ablation tables
# ---------------------------------------------------------------------------

_COLUMNS = ("label", "seed", "mean_abs_residual", "mean_loss_cbf", "volume_ratio")


@dataclass
class AblationTable:
    """Per-seed rows plus a mean row per label, in input order."""

    rows: List[dict]

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(_COLUMNS) + "\n")
            for r in self.rows:
                f.write(
                    f"{r['label']},{r['seed']},{r['mean_abs_residual']!r},"
                    f"{r['mean_loss_cbf']!r},{r['volume_ratio']!r}\n"
                )

    def to_text(self) -> str:
        header = f"{'label':<24} {'seed':>6} {'mean|N|':>10} {'L_CBF':>10} {'vol':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r['label']:<24} {r['seed']:>6} "
                f"{r['mean_abs_residual']:>10.4f} {r['mean_loss_cbf']:>10.4f} "
                f"{r['volume_ratio']:>8.3f}"
            )
        return "\n".join(lines) + "\n"


def ablation_table(
    entries: Sequence[Tuple[str, Sequence]],
    spec: EvalSpec,
    backend=None,
) -> AblationTable:
    """Train/evaluate each entry and tabulate.

    entries: (label, runs) pairs where each run is either a TrainConfig
    to train now or an already-trained checkpoint document. Each label
    gets one row per run plus a 'mean' row averaging its seeds.
    """
    rows = []
    for label, runs in entries:
        if len(runs) == 0:
            raise ConfigError(f"ablation entry {label!r} has no runs")
        group = []
        for run in runs:
            ckpt = run if isinstance(run, dict) else T.train(run)
            rep = evaluate(ckpt, spec, backend=backend)
            seed = ckpt["config"]["seed"]
            group.append(
                {
                    "label": label,
                    "seed": seed,
                    "mean_abs_residual": rep.mean_abs_residual,
                    "mean_loss_cbf": rep.mean_loss_cbf,
                    "volume_ratio": rep.volume_ratio,
                }
            )
        rows.extend(group)
        rows.append(
            {
                "label": label,
                "seed": "mean",
                "mean_abs_residual": float(
                    np.mean([g["mean_abs_residual"] for g in group])
                ),
                "mean_loss_cbf": float(np.mean([g["mean_loss_cbf"] for g in group])),
                "volume_ratio": float(np.mean([g["volume_ratio"] for g in group])),
            }
        )
    return AblationTable(rows=rows)
