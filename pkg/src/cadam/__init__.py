"""Adaptive solver and benchmark harness for nested compositional
optimization problems J(x) = E[f(E[g(x)])]."""

from .core import (
    CompositionalProblem,
    DimensionMismatchError,
    InnerBatch,
    InvalidConfigError,
    NumericFailureError,
    ProblemConstants,
    SampleStreams,
    ScheduleConfig,
    StepParams,
    composite_smoothness,
    meta_schedule,
    portfolio_schedule,
    sample_inner,
    sample_outer,
)
from .optimizers import (
    AdamState,
    BaselineSchedule,
    BaselineState,
    CAdamState,
    StepReport,
    adam_step,
    ascpg_run,
    ascpg_step,
    cadam_run,
    cadam_step,
    scgd_run,
    scgd_step,
    sgd_step,
)
from .problems import (
    PortfolioData,
    QuadCompose,
    identity_problem,
    portfolio_objective_compositional,
    portfolio_problem,
    quad_compose_problem,
    random_quad,
    synthetic_returns,
)
from .nets import Mlp, hvp, init_mlp, mlp_loss_grad, mlp_mse
from .meta import (
    SineTask,
    TaskBatch,
    fine_tune_curve,
    fine_tune_eval,
    multi_task_meta_problem,
    sample_batch,
    sample_task,
    single_task_meta_problem,
)
from .diagnostics import (
    DecayCertificate,
    DecayRecursionConfig,
    TrackingBound,
    certify_power_decay,
    decay_exponent_fit,
    envelope_burn_in,
    estimate_constants,
    theta_coefficients,
    tracking_bound_recursion,
    tracking_error,
)
from .trace import RunTrace, geometric_checkpoints

__version__ = "0.1.0"
