"""Time-series classification with Gaussian-process augmentation and the
normalized expected signature."""

from ._backend import BACKEND
from .augmentation import AugmenterParams, TimeGrid, gp_posterior, make_grid
from .baselines import ReadoutParams, init_readout
from .datasets import Dataset, TaskParams, load_tsv, make_task, write_tsv
from .expected_signature import ExpSigEstimate, expected_signature, hoeffding_sample_size
from .model import (
    ModelHyper,
    ModelParams,
    TrainConfig,
    evaluate,
    forward,
    init_params,
    loss_and_grad,
    output_variance_analysis,
    train_sgd,
    weighted_accuracy,
)
from .normalization import NormConfig, lambda_gradient, normalize, psi, solve_lambda
from .persist import load_config, load_model, save_model
from .signature import TimeSeries, signature, signature_vjp, time_augment
from .tensor_algebra import TruncTensor, tensor_exp, tensor_mul

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AugmenterParams", "Dataset", "ExpSigEstimate", "ModelHyper", "ModelParams",
    "NormConfig", "ReadoutParams", "TaskParams", "TimeGrid", "TimeSeries", "TrainConfig",
    "TruncTensor", "evaluate", "expected_signature", "forward", "gp_posterior",
    "hoeffding_sample_size", "init_params", "init_readout", "lambda_gradient", "load_config",
    "load_model", "load_tsv", "loss_and_grad", "make_grid", "make_task", "normalize",
    "output_variance_analysis", "psi", "save_model", "signature", "signature_vjp",
    "solve_lambda", "tensor_exp", "tensor_mul", "time_augment", "train_sgd",
    "weighted_accuracy", "write_tsv",
]
