"""Pavement Condition Index regression from images with a CBAM-augmented ResNet50."""
from .attention import CBAM, cbam_apply, channel_attention, spatial_attention
from .backbones import ArchitectureSpec, build_model, count_parameters, predict
from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import PCIRegressor
from .metrics import MetricReport, mae, mape, r_squared, rmse

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "CBAM", "MetricReport", "PCIRegressor", "build_model", "cbam_apply",
    "channel_attention", "count_parameters", "load_checkpoint", "mae", "mape", "predict", "r_squared",
    "rmse", "save_checkpoint", "spatial_attention",
]
