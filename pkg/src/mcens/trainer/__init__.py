"""Desk-scale MLP encoders trained under supervised and contrastive criteria."""
from .data import DataSpec, SyntheticDataset, gen_synthetic
from .losses import (cross_entropy_grad, cross_entropy_loss, nt_xent_grad, nt_xent_loss,
                     supcon_grad, supcon_loss)
from .mlp import (MlpParams, forward_features, forward_logits, init_params, interpolate_params,
                  load_params, save_params)
from .rebasin import BarrierResult, loss_barrier, permute_hidden, weight_match_permute
from .train import CRITERIA, TrainConfig, config_for, train_mlp

__all__ = [
    "DataSpec", "SyntheticDataset", "gen_synthetic",
    "cross_entropy_grad", "cross_entropy_loss", "nt_xent_grad", "nt_xent_loss",
    "supcon_grad", "supcon_loss",
    "MlpParams", "forward_features", "forward_logits", "init_params", "interpolate_params",
    "load_params", "save_params",
    "BarrierResult", "loss_barrier", "permute_hidden", "weight_match_permute",
    "CRITERIA", "TrainConfig", "config_for", "train_mlp",
]
