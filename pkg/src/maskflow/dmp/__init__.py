from .gradcheck import GradCheckReport, grad_check, numeric_grad
from .model import (
    Batch,
    DMPParams,
    LossBreakdown,
    LossWeights,
    ToyDenoiserParams,
    backward,
    forward,
    mlp_forward,
    predict_mask,
    total_loss,
)
from .ops import (
    concat_latents,
    flatten_grid,
    loss_diff,
    loss_mask,
    loss_pred,
    reshape_tokens,
    rf_interpolant,
    trilinear_upsample,
)
from .synthetic import ToyDataset, make_synthetic_task
from .train import TrainConfig, TrainResult, TrainingDiverged, load_params, save_params, train_toy, write_curve
