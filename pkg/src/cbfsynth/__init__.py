"""Neural control barrier function synthesis for input-constrained systems.

The pipeline in one line: Boolean safety constraints compose into a
smooth log-sum-exp under-approximation cbar (constraints), a residual
network delta makes h = cbar - delta and trains against the stationary
Hamilton-Jacobi residual (network, hjloss, sampling, trainer), and the
result deploys as an exact box-constrained CBF-QP safety filter inside
a closed-loop simulator (qpfilter, simulate). validation computes the
table metrics, scenarios/cli wrap everything into reproducible runs.
"""

from .errors import (
    CbfSynthError,
    CheckpointError,
    ConfigError,
    DomainError,
    SamplingError,
    TrainingError,
)
from .constraints import (
    Expr,
    SmoothingConfig,
    leaf,
    generic_leaf,
    conj,
    disj,
    neg,
    normalize_nnf,
    eval_exact,
    eval_smooth,
    grad_smooth,
    gap_bound,
    rect_complement,
    rotated_rect_complement,
    box_interior,
    wall_interior,
    save_expr,
    load_expr,
)
from .dynamics import SystemSpec, by_name, double_integrator, dubins_plane
from .network import CbfModel, MlpParams, init_params, make_model, h_batch
from .hjloss import LossHyper, batch_eval, hamiltonian, risk
from .sampling import (
    SampleSet,
    uniform_box,
    rejection_sample,
    rwmh_sample,
    histogram_tv,
)
from .trainer import (
    TrainConfig,
    train,
    save_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    checkpoint_digest,
    derive_seed,
)
from .qpfilter import FilterResult, cbf_constraint, solve_filter, filter_control
from .simulate import (
    PidController,
    PidGains,
    TakeoffReference,
    Trajectory,
    di_pid_gains,
    rk4_step,
    rollout,
    TAKEOFF_X0,
)
from .validation import EvalSpec, MetricsReport, evaluate, ablation_table
from .scenarios import (
    ScenarioConfig,
    SimParams,
    BUILTIN_SCENARIOS,
    builtin_scenario,
    load_scenario,
    save_scenario,
    initial_states,
    make_reference,
)

__version__ = "0.1.0"
