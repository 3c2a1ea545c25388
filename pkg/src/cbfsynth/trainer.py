"""Empirical risk minimization for the CBF candidate.

The loop is the standard recipe: compose cbar from the constraint
file, draw the sample set once, initialize delta with a zero final
layer (so h = cbar - ln2/softplus_beta at epoch 0), then minibatch
Adam on the HJ risk. Everything theta-independent -- cbar, grad cbar,
f(x), g(x) -- is precomputed per sample before the first step.

Determinism: every random stream (sampling, init, shuffling) uses a
sub-seed derived from (config.seed, crc32(stream label)), and all
reductions are fixed-order numpy, so a config trains to a bitwise
identical checkpoint every time. Checkpoints are JSON; floats survive
exactly (shortest round-trip repr both ways).
"""

from __future__ import annotations

import json
import os
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import constraints as C
from . import dynamics as D
from . import hjloss as HJ
from . import network as N
from . import sampling as S
from .errors import CheckpointError, ConfigError, TrainingError

CHECKPOINT_FORMAT = "cbfsynth-checkpoint-v1"

_SAMPLERS = ("uniform", "rejection", "rwmh")


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named stream of one run."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    system: str = "di"
    system_params: dict = field(default_factory=dict)
    constraint_path: Optional[str] = None  # JSON file; exclusive with constraint_doc
    constraint_doc: Optional[dict] = None  # inline tree document
    beta: float = 10.0
    gamma: float = 0.5
    lam: float = 0.2
    widths: tuple = (2, 50, 50, 1)
    activation: str = "tanh"
    softplus_beta: float = 1.0
    sampler: str = "rejection"
    sampler_params: dict = field(default_factory=dict)
    n_samples: int = 10_000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 512
    epochs: int = 200
    lr_schedule: str = "constant"  # constant | cosine
    lr_warmup: int = 0  # epochs of linear ramp 0 -> lr before the schedule
    grad_clip: float = 0.0  # global-norm clip per step; 0 disables
    seed: int = 0
    backend: Optional[str] = None

    def __post_init__(self):
        if self.sampler not in _SAMPLERS:
            raise ConfigError(f"sampler must be one of {_SAMPLERS}, got {self.sampler!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(
                f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}"
            )
        if self.lr_warmup < 0 or self.lr_warmup >= max(self.epochs, 1):
            if self.lr_warmup != 0:
                raise ConfigError(
                    f"lr_warmup must lie in [0, epochs), got {self.lr_warmup}"
                )
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")
        for name in ("beta", "gamma", "lam", "softplus_beta", "lr", "adam_eps"):
            v = getattr(self, name)
            if v < 0 or (v <= 0 and name in ("beta", "softplus_beta", "lr", "adam_eps")):
                raise ConfigError(f"{name} must be positive, got {v}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.n_samples < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("need n_samples >= 1, batch_size >= 1, epochs >= 0")
        if self.batch_size > self.n_samples:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds n_samples {self.n_samples}"
            )
        if (self.constraint_path is None) == (self.constraint_doc is None):
            raise ConfigError(
                "exactly one of constraint_path / constraint_doc must be set"
            )
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        d = dict(doc)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def resolve_constraint(self) -> C.Expr:
        if self.constraint_doc is not None:
            return C.expr_from_dict(self.constraint_doc)
        try:
            return C.load_expr(self.constraint_path)
        except OSError as err:
            raise ConfigError(
                f"cannot read constraint file {self.constraint_path}: {err}"
            ) from err


def adam_step(theta, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (theta, m, v)."""
    if not np.all(np.isfinite(grad)):
        raise TrainingError(
            f"non-finite gradient entries at step t={t} "
            f"({np.count_nonzero(~np.isfinite(grad))} of {grad.size})"
        )
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    return theta - lr * mhat / (np.sqrt(vhat) + eps), m, v


def draw_samples(config: TrainConfig, expr, system) -> S.SampleSet:
    """The configured sampler over the system's domain box."""
    seed = derive_seed(config.seed, "sample")
    cfg = C.SmoothingConfig(config.beta)
    lo, hi = system.domain_lo, system.domain_hi
    if config.sampler == "uniform":
        return S.uniform_box(lo, hi, config.n_samples, seed)
    if config.sampler == "rejection":
        return S.rejection_sample(
            expr, cfg, lo, hi, config.n_samples, seed,
            backend=config.backend, **config.sampler_params,
        )
    return S.rwmh_sample(
        expr, cfg, lo, hi, config.n_samples, seed,
        backend=config.backend, **config.sampler_params,
    )


def train(config: TrainConfig) -> dict:
    """Run the full training loop; returns the checkpoint document."""
    t_start = time.time()
    expr = C.normalize_nnf(config.resolve_constraint())
    system = D.by_name(config.system, **config.system_params)
    if config.widths[0] != system.state_dim:
        raise ConfigError(
            f"widths[0] = {config.widths[0]} but system {config.system!r} "
            f"has state dimension {system.state_dim}"
        )
    hyper = HJ.LossHyper(gamma=config.gamma, lam=config.lam)

    samples = draw_samples(config, expr, system)
    X = samples.states

    net = N.init_params(
        config.widths,
        activation=config.activation,
        seed=derive_seed(config.seed, "init"),
        softplus_beta=config.softplus_beta,
        input_box=(system.domain_lo, system.domain_hi),
    )
    model = N.make_model(expr, C.SmoothingConfig(config.beta), net)

    # theta-independent precomputations over the whole sample set
    F, G = HJ.precompute_dynamics(system, X)
    cbar, cbar_grad = N.cbar_batch(model, X, backend=config.backend)

    def full_stats(mdl):
        ev = HJ.batch_eval(
            system, mdl, X, hyper, precomp=(F, G), cbar_pre=(cbar, cbar_grad),
            backend=config.backend,
        )
        return {
            "risk": ev.risk_total(hyper.lam),
            "mean_loss_hj": float(np.mean(ev.l_hj)),
            "mean_loss_cbf": float(np.mean(ev.l_cbf)),
        }

    history = [{"epoch": 0, **full_stats(model)}]
    if not np.isfinite(history[0]["risk"]):
        raise TrainingError("non-finite risk at initialization")

    theta = N.flatten_params(net)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    n = X.shape[0]
    t = 0
    for epoch in range(1, config.epochs + 1):
        if epoch <= config.lr_warmup:
            lr = config.lr * epoch / (config.lr_warmup + 1)
        elif config.lr_schedule == "cosine":
            e0, span = epoch - config.lr_warmup, config.epochs - config.lr_warmup
            lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * (e0 - 1) / span))
        else:
            lr = config.lr
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            t += 1
            try:
                _, grad, _ = HJ.risk_and_param_grad(
                    system, model, X[idx], hyper,
                    precomp=(F[idx], G[idx]),
                    cbar_pre=(cbar[idx], cbar_grad[idx]),
                    backend=config.backend,
                )
                if config.grad_clip > 0.0:
                    gn = float(np.linalg.norm(grad))
                    if gn > config.grad_clip:
                        grad = grad * (config.grad_clip / gn)
                theta, m, v = adam_step(
                    theta, grad, m, v, t,
                    lr=lr, beta1=config.adam_beta1,
                    beta2=config.adam_beta2, eps=config.adam_eps,
                )
            except TrainingError as err:
                raise TrainingError(f"epoch {epoch}, step {t}: {err}") from err
            model = replace(model, net=N.unflatten_params(net, theta))
        stats = full_stats(model)
        if not np.isfinite(stats["risk"]):
            raise TrainingError(f"non-finite risk after epoch {epoch}")
        history.append({"epoch": epoch, **stats})

    return {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "constraint": C.expr_to_dict(expr),
        "params": [float(p) for p in theta],
        "history": history,
        "final_risk": history[-1]["risk"],
        "meta": {
            "created_unix": time.time(),
            "duration_s": time.time() - t_start,
            "sample_provenance": samples.provenance,
        },
    }


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("format", "config", "constraint", "params", "history", "final_risk")


def save_checkpoint(doc: dict, path) -> None:
    """Atomic JSON write: the file either exists complete or not at all."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise CheckpointError(f"malformed checkpoint {path}: {err}") from err
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks keys {missing}")
    if doc["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"checkpoint format {doc['format']!r} unsupported "
            f"(expected {CHECKPOINT_FORMAT!r})"
        )
    return doc


def model_from_checkpoint(doc: dict):
    """(model, config) rebuilt from a checkpoint document."""
    config = TrainConfig.from_dict(doc["config"])
    expr = C.expr_from_dict(doc["constraint"])
    system = D.by_name(config.system, **config.system_params)
    template = N.init_params(
        config.widths, activation=config.activation,
        softplus_beta=config.softplus_beta,
        input_box=(system.domain_lo, system.domain_hi),
    )
    params = np.asarray(doc["params"], dtype=float)
    if params.shape != (template.n_params,):
        raise CheckpointError(
            f"checkpoint has {params.shape[0]} parameters, "
            f"architecture needs {template.n_params}"
        )
    net = N.unflatten_params(template, params)
    model = N.make_model(expr, C.SmoothingConfig(config.beta), net)
    return model, config


def checkpoint_digest(doc: dict) -> str:
    """sha256 over the checkpoint minus volatile metadata."""
    import hashlib

    stable = {k: v for k, v in doc.items() if k != "meta"}
    blob = json.dumps(stable, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def history_to_csv(doc: dict, path) -> None:
    """Training history as CSV: epoch, risk, mean_loss_hj, mean_loss_cbf."""
    with open(path, "w") as f:
        f.write("epoch,risk,mean_loss_hj,mean_loss_cbf\n")
        for row in doc["history"]:
            f.write(
                f"{row['epoch']},{row['risk']!r},{row['mean_loss_hj']!r},"
                f"{row['mean_loss_cbf']!r}\n"
            )
