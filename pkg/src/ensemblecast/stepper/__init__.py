"""Autoregressive forecast engine: steppers, loss, rollout, training."""

from .core import (
    CHANNELS,
    N_CHANNELS,
    Samples,
    StepContext,
    StepInput,
    Trajectory,
    apply_increment,
    batch_loss,
    forecast_inputs,
    gradient_check,
    loss_weighted_mse,
    make_features,
    one_step_rmse,
    one_step_samples,
    rollout,
    step,
)
from .graph import GraphStepper, GraphTopology
from .models import LinearStencil, Persistence
