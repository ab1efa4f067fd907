"""Motion-space adversarial post-training for few-step video generators,
at desk scale."""

__version__ = "0.1.0"

from .fm import (  # noqa: F401
    BackwardSim,
    DistilledTimesteps,
    LinearSchedule,
    backward_simulate,
    few_step_sample,
    noise_to_level,
    score_to_velocity,
    velocity_to_score,
    velocity_to_x0,
)
from .losses import (  # noqa: F401
    LossWeights,
    combined_gan_loss,
    dmd_generator_loss,
    fake_score_loss,
    gan_d_loss,
    gan_g_loss,
    r_regularizer,
    softplus_g,
)
from .metrics import MotionReport, dynamics_degree, evaluate_model, motion_score, smoothness  # noqa: F401
