"""Command-line surface: compose / train / validate / simulate.

Each command reads a scenario (``--config builtin:NAME`` or a JSON
file, see scenarios.py) and writes plain artifacts — CSV grids and
trajectories, JSON reports, SVG figures — into ``--out`` (default: the
scenario's ``out_dir``). Outputs are byte-identical across reruns with
the same inputs, except the checkpoint's wall-clock metadata block.

Seed plumbing: one seed drives a pipeline. ``--seed`` replaces the
scenario's training seed; every other random stream derives from that
seed through ``trainer.derive_seed(seed, label)`` with a fixed label
per use ("simulate:x0" for sampled start states, "validate:mc" for
Monte Carlo evaluation draws), so reruns and downstream commands agree
without sharing RNG state.

Exit codes: 0 success, 2 configuration or checkpoint-format errors,
3 infeasible sampling, 4 numeric failures (training divergence, domain
escapes), 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import constraints as C
from . import dynamics as D
from . import hjloss as HJ
from . import kernels as K
from . import network as N
from . import scenarios as SC
from . import simulate as SIM
from . import svgplot as SVG
from . import trainer as T
from . import validation as V
from .errors import (
    CbfSynthError,
    CheckpointError,
    ConfigError,
    DomainError,
    SamplingError,
    TrainingError,
)

__all__ = ["main", "cmd_compose", "cmd_train", "cmd_validate", "cmd_simulate"]


# ---------------------------------------------------------------------------
# small parsers and writers
# ---------------------------------------------------------------------------


def _parse_betas(text: str) -> list:
    try:
        betas = [float(b) for b in text.split(",") if b.strip()]
    except ValueError as err:
        raise ConfigError(f"--betas must be comma-separated numbers: {err}") from err
    if not betas or any(b <= 0 for b in betas):
        raise ConfigError(f"--betas must be positive, got {text!r}")
    return betas


def _parse_grid(text: str) -> tuple:
    try:
        dims = tuple(int(d) for d in text.lower().split("x"))
    except ValueError as err:
        raise ConfigError(f"--grid must look like 240x160: {err}") from err
    return dims


def _beta_tag(beta: float) -> str:
    return str(int(beta)) if float(beta).is_integer() else str(beta).replace(".", "p")


def _write_grid_csv(path, xs, ys, Z, dims) -> None:
    """Wide-format grid: rows follow axis dims[0], columns dims[1]."""
    with open(path, "w") as f:
        f.write(f"x_{dims[0] + 1}\\x_{dims[1] + 1},")
        f.write(",".join(repr(float(y)) for y in ys) + "\n")
        for i, x in enumerate(xs):
            f.write(repr(float(x)) + ",")
            f.write(",".join(repr(float(z)) for z in Z[i]) + "\n")


def _json_clean(obj):
    """Recursively map NaN/inf to None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path, doc) -> None:
    with open(path, "w") as f:
        json.dump(_json_clean(doc), f, indent=1, sort_keys=True)
        f.write("\n")


def _slice_grid(config: SC.ScenarioConfig, system, grid_dims):
    """Axes and the state batch for the scenario's 2-D plot plane."""
    dims, anchor = config.slice_spec(system)
    if len(grid_dims) != 2 or any(d < 2 for d in grid_dims):
        raise ConfigError(f"--grid needs two axis counts >= 2, got {grid_dims}")
    lo, hi = system.domain_lo, system.domain_hi
    xs = np.linspace(lo[dims[0]], hi[dims[0]], grid_dims[0])
    ys = np.linspace(lo[dims[1]], hi[dims[1]], grid_dims[1])
    mx, my = np.meshgrid(xs, ys, indexing="ij")
    X = np.tile(anchor, (mx.size, 1))
    X[:, dims[0]] = mx.ravel()
    X[:, dims[1]] = my.ravel()
    return dims, xs, ys, X


def _constraint_values(expr: C.Expr, X, beta: Optional[float]):
    """Batch c (beta None) or cbar values, compiled when possible."""
    nf = C.normalize_nnf(expr)
    try:
        cc = K.compile_constraint(nf)
    except ConfigError:
        if beta is None:
            return np.array([C.eval_exact(nf, x) for x in X])
        cfg = C.SmoothingConfig(beta=beta)
        return np.array([C.eval_smooth(nf, x, cfg) for x in X])
    if beta is None:
        return K.batch_exact(cc, X)
    return K.batch_smooth(cc, X, beta)


_CONTOUR_COLORS = ("#c0392b", "#2c6fbb", "#1e8449", "#8e44ad", "#b7950b")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_compose(config: SC.ScenarioConfig, betas, grid_dims, out_dir) -> list:
    """Exact vs smoothed constraint grids and zero-contour figures."""
    system = config.system()
    expr = config.train.resolve_constraint()
    dims, xs, ys, X = _slice_grid(config, system, grid_dims)
    shape = (xs.size, ys.size)
    written = []

    c_exact = _constraint_values(expr, X, None).reshape(shape)
    path = os.path.join(out_dir, "c.csv")
    _write_grid_csv(path, xs, ys, c_exact, dims)
    written.append(path)

    vmax = float(np.max(np.abs(c_exact[np.isfinite(c_exact)])))
    world_lo = (xs[0], ys[0])
    world_hi = (xs[-1], ys[-1])
    overview = SVG.SvgFigure(
        world_lo, world_hi,
        title=f"{config.name}: zero contours of cbar by beta (dashed: exact c)",
    )
    overview.add_heatmap(xs, ys, c_exact, vmax=vmax)
    overview.add_contour(xs, ys, c_exact, color="#111111", dashes="5,4")

    for rank, beta in enumerate(betas):
        cbar = _constraint_values(expr, X, beta).reshape(shape)
        tag = _beta_tag(beta)
        path = os.path.join(out_dir, f"cbar_beta{tag}.csv")
        _write_grid_csv(path, xs, ys, cbar, dims)
        written.append(path)

        fig = SVG.SvgFigure(
            world_lo, world_hi,
            title=f"{config.name}: cbar at beta={beta:g} (dashed: exact c)",
        )
        fig.add_heatmap(xs, ys, cbar, vmax=vmax)
        fig.add_contour(xs, ys, c_exact, color="#111111", dashes="5,4")
        fig.add_contour(xs, ys, cbar, color="#c0392b", width=2.0)
        path = os.path.join(out_dir, f"compose_beta{tag}.svg")
        fig.save(path)
        written.append(path)

        color = _CONTOUR_COLORS[rank % len(_CONTOUR_COLORS)]
        overview.add_contour(xs, ys, cbar, color=color, width=2.0)
        lx = xs[0] + (0.03 + 0.22 * rank) * (xs[-1] - xs[0])
        overview.add_label((lx, ys[-1] - 0.05 * (ys[-1] - ys[0])),
                           f"beta={beta:g}", color=color)

    path = os.path.join(out_dir, "compose_overview.svg")
    overview.save(path)
    written.append(path)
    return written


def cmd_train(config: SC.ScenarioConfig, out_dir) -> dict:
    """Train the scenario's model; emit checkpoint, history, provenance."""
    doc = T.train(config.train)
    T.save_checkpoint(doc, os.path.join(out_dir, "checkpoint.json"))
    T.history_to_csv(doc, os.path.join(out_dir, "history.csv"))
    C.save_expr(config.train.resolve_constraint(),
                os.path.join(out_dir, "constraint.json"))
    SC.save_scenario(config, os.path.join(out_dir, "scenario.json"))
    return doc


def cmd_validate(checkpoint: dict, spec: V.EvalSpec, out_dir,
                 backend=None) -> V.MetricsReport:
    """MetricsReport for a checkpoint on a grid or MC evaluation set."""
    report = V.evaluate(checkpoint, spec, backend=backend)
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        f.write(report.to_json())
    return report


def cmd_simulate(
    checkpoint: Optional[dict],
    config: SC.ScenarioConfig,
    out_dir,
    apply_filter: bool = True,
    backend=None,
) -> dict:
    """Closed-loop rollouts for every scenario start state.

    With a checkpoint the reference passes through the CBF-QP filter
    (or, with apply_filter False, runs clamped-only while h and the
    constraint values are still logged). Without a checkpoint only
    explicitly listed start states can run and the h / c_smooth
    columns stay empty; exact constraint values are recomputed from
    the scenario geometry either way.
    """
    system = config.system()
    expr = config.train.resolve_constraint()
    model = hyper = None
    if checkpoint is not None:
        model, ck_cfg = T.model_from_checkpoint(checkpoint)
        hyper = HJ.LossHyper(gamma=ck_cfg.gamma, lam=ck_cfg.lam)
    elif not config.sim.x0:
        raise ConfigError(
            "simulate without a checkpoint needs explicit x0 in the scenario "
            "(sampling safe starts requires the trained model)"
        )
    X0 = SC.initial_states(config, model=model, backend=backend)

    runs = []
    trajs = []
    for idx, x0 in enumerate(X0):
        reference = SC.make_reference(config, system)
        traj = SIM.rollout(
            system, reference, x0,
            T=config.sim.T, dt=config.sim.dt,
            model=model, hyper=hyper,
            apply_filter=apply_filter, backend=backend,
        )
        if model is None:
            traj.c_exact = _constraint_values(expr, traj.states, None)
            traj.c_smooth = _constraint_values(expr, traj.states,
                                               config.train.beta)
        path = os.path.join(out_dir, f"traj_{idx:03d}.csv")
        traj.to_csv(path)
        trajs.append(traj)
        min_c = float(np.min(traj.c_exact))
        runs.append({
            "traj": os.path.basename(path),
            "x0": [float(v) for v in x0],
            "steps": len(traj) - 1,
            "truncated": bool(traj.truncated),
            "min_h": float(np.min(traj.h)),
            "min_c_exact": min_c,
            "violation": bool(min_c < 0),
            "u_in_box": bool(
                np.all(traj.u >= system.input_lo - 1e-12)
                and np.all(traj.u <= system.input_hi + 1e-12)
            ),
            "statuses": {s: traj.status.count(s) for s in sorted(set(traj.status))},
        })

    summary = {
        "scenario": config.to_dict(),
        "filtered": bool(model is not None and apply_filter),
        "checkpoint_digest":
            T.checkpoint_digest(checkpoint) if checkpoint is not None else None,
        "n_runs": len(runs),
        "n_violations": sum(r["violation"] for r in runs),
        "n_truncated": sum(r["truncated"] for r in runs),
        "min_c_exact": min(r["min_c_exact"] for r in runs),
        "runs": runs,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)

    if system.state_dim == 2:
        _simulate_svg(config, system, expr, model, trajs,
                      os.path.join(out_dir, "trajectories.svg"))
    return summary


def _simulate_svg(config, system, expr, model, trajs, path) -> None:
    """Fig.-1-style overlay: cbar heatmap, h contour, trajectories."""
    dims, xs, ys, X = _slice_grid(config, system, (240, 160))
    shape = (xs.size, ys.size)
    cbar = _constraint_values(expr, X, config.train.beta).reshape(shape)
    fig = SVG.SvgFigure(
        (xs[0], ys[0]), (xs[-1], ys[-1]),
        title=f"{config.name}: rollouts over cbar (solid: h=0, dashed: cbar=0)",
    )
    fig.add_heatmap(xs, ys, cbar)
    fig.add_contour(xs, ys, cbar, color="#111111", dashes="5,4")
    if model is not None:
        hv, _, _ = N.h_batch(model, X)
        fig.add_contour(xs, ys, hv.reshape(shape), color="#111111", width=2.0)
    for traj in trajs:
        bad = bool(np.min(traj.c_exact) < 0)
        fig.add_polyline(
            traj.states[:, dims],
            color="#c0392b" if bad else "#2c6fbb",
            width=1.2,
            opacity=0.7,
        )
        fig.add_marker(traj.states[0, dims], color="#111111", radius=2.0)
    fig.save(path)


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbfsynth",
        description="Synthesize and deploy neural control barrier functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True,
                       help="scenario: builtin:NAME or a JSON file path")
        p.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="replace the scenario's training seed")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: scenario out_dir)")
        if checkpoint:
            p.add_argument("checkpoint", nargs="?", default=None,
                           help="trained checkpoint JSON")

    p = sub.add_parser("compose", help="exact vs smoothed constraint grids")
    common(p)
    p.add_argument("--betas", default="2,5,10", metavar="LIST",
                   help="comma-separated smoothing sharpness values")
    p.add_argument("--grid", default="240x160", metavar="AxB",
                   help="heatmap resolution over the plot plane")

    p = sub.add_parser("train", help="train the scenario's model")
    common(p)
    p.add_argument("--epochs", type=int, default=None, metavar="N",
                   help="override the scenario's epoch count")

    p = sub.add_parser("validate", help="table metrics for a checkpoint")
    common(p, checkpoint=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", default=None, metavar="AxB",
                   help="full-dimension evaluation grid, e.g. 400x250")
    g.add_argument("--mc", type=int, default=None, metavar="N",
                   help="Monte Carlo evaluation draw count")

    p = sub.add_parser("simulate", help="closed-loop rollouts")
    common(p, checkpoint=True)
    p.add_argument("--no-filter", action="store_true",
                   help="run the clamped reference without the CBF-QP")

    return parser


def _resolve_scenario(args) -> SC.ScenarioConfig:
    config = SC.load_scenario(args.config)
    train = config.train
    if args.seed is not None:
        train = dataclasses.replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        # keep the warmup legal when the override shortens the run
        warmup = min(train.lr_warmup, max(args.epochs - 1, 0))
        train = dataclasses.replace(train, epochs=args.epochs, lr_warmup=warmup)
    if train is not config.train:
        config = dataclasses.replace(config, train=train)
    if args.out:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _eval_spec(args, checkpoint: dict) -> V.EvalSpec:
    cfg = T.TrainConfig.from_dict(checkpoint["config"])
    if args.grid is not None and args.mc is not None:
        raise ConfigError("--grid and --mc are mutually exclusive")
    seed_base = args.seed if args.seed is not None else cfg.seed
    if args.grid is not None:
        return V.EvalSpec.grid(*_parse_grid(args.grid))
    if args.mc is not None:
        return V.EvalSpec.monte_carlo(args.mc, T.derive_seed(seed_base, "validate:mc"))
    system = D.by_name(cfg.system, **cfg.system_params)
    if system.state_dim == 2:
        return V.EvalSpec.grid(400, 250)
    return V.EvalSpec.monte_carlo(1_000_000, T.derive_seed(seed_base, "validate:mc"))


def _run(args) -> int:
    config = _resolve_scenario(args)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)

    if args.command == "compose":
        written = cmd_compose(config, _parse_betas(args.betas),
                              _parse_grid(args.grid), out_dir)
        for path in written:
            print(path)
        return 0

    if args.command == "train":
        doc = cmd_train(config, out_dir)
        print(f"checkpoint: {os.path.join(out_dir, 'checkpoint.json')}")
        print(f"final risk: {doc['final_risk']!r} "
              f"(from {doc['history'][0]['risk']!r} at initialization)")
        return 0

    if args.command == "validate":
        if args.checkpoint is None:
            raise ConfigError("validate needs a checkpoint path")
        checkpoint = T.load_checkpoint(args.checkpoint)
        report = cmd_validate(checkpoint, _eval_spec(args, checkpoint), out_dir)
        print(f"mean |residual|: {report.mean_abs_residual:.6f}")
        print(f"mean cbf loss:   {report.mean_loss_cbf:.6f}")
        print(f"volume ratio:    {report.volume_ratio:.6f}")
        print(f"report: {os.path.join(out_dir, 'metrics.json')}")
        return 0

    if args.command == "simulate":
        checkpoint = None
        if args.checkpoint is not None:
            checkpoint = T.load_checkpoint(args.checkpoint)
        summary = cmd_simulate(checkpoint, config, out_dir,
                               apply_filter=not args.no_filter)
        mode = "filtered" if summary["filtered"] else "unfiltered"
        print(f"{mode} runs: {summary['n_runs']}  "
              f"violations: {summary['n_violations']}  "
              f"truncated: {summary['n_truncated']}  "
              f"min c: {summary['min_c_exact']:+.6f}")
        print(f"summary: {os.path.join(out_dir, 'summary.json')}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SamplingError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (TrainingError, DomainError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except CbfSynthError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
