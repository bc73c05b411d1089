from .checkpoint import load_checkpoint, save_checkpoint
from .denoisers import (
    AnalyticGaussianDenoiser,
    ConvUNetDenoiser,
    Denoiser,
    DenoiserConfig,
    MlpDenoiser,
    NetworkDenoiser,
    make_denoiser,
)
from .engine import Var, backward
from .optim import ParameterSet, adamw_step

__all__ = [
    "AnalyticGaussianDenoiser",
    "ConvUNetDenoiser",
    "Denoiser",
    "DenoiserConfig",
    "MlpDenoiser",
    "NetworkDenoiser",
    "ParameterSet",
    "Var",
    "adamw_step",
    "backward",
    "load_checkpoint",
    "make_denoiser",
    "save_checkpoint",
]
