"""Adversarial optimization in the threat model B1(x, eps) ∩ [0,1]^d."""

from .apgd import (
    ApgdConfig,
    AttackResult,
    apgd_multi,
    apgd_restarts,
    apgd_single,
    checkpoints,
    sparsity_update,
    step_size_update,
)
from .ensemble import (
    EnsembleConfig,
    EvalReport,
    autoattack,
    robust_accuracy,
    slide_attack,
    worst_case_merge,
)
from .errors import DimensionMismatchError, InvariantViolationError, ParameterError
from .geometry import (
    SteepestStep,
    ThreatModel,
    approx_project,
    clip_box,
    expected_sparsity_closed_form,
    irwin_hall_cdf,
    project_box_l1,
    project_l1_ball,
    sparse_sign_step,
    steepest_descent_direction,
)
from .models import (
    LabeledDataset,
    LinearSoftmaxModel,
    LogitsOracle,
    MlpModel,
    cross_entropy,
    dlr_targeted,
    finite_diff_grad,
    loss_and_grad,
    make_blobs,
    margin_loss,
    train_plain,
)
from .squareattack import SquareConfig, pyramid_eta, square_attack, window_schedule

__version__ = "0.1.0"
