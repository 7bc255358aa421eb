"""Kernel machines trained by dual block coordinate descent.

The dual of a regularized kernel learning problem is solved block by block,
each block with a box-constrained trust-region method.  Kernels are
evaluated exactly or approximated by random Fourier features.
"""

from .config import RunConfig, load_config
from .data import Dataset, load_csv, load_libsvm, synth_make, train_test_split, zscore_apply, zscore_fit
from .estimators import DualKernelClassifier, DualKernelRegressor
from .kernels import KernelSpec, RffMap, kernel_block, median_heuristic, rff_map, rff_sample
from .losses import LOSS_NAMES, make_loss
from .model import (
    DualProblem,
    OvrModel,
    TrainedModel,
    load_model,
    ovr_predict,
    ovr_train,
    predict_label,
    predict_proba,
    predict_raw,
    save_model,
    train,
)
from .solver import DivergenceError, TrustRegionConfig, dbcd_train, partition_blocks

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "Dataset",
    "load_csv",
    "load_libsvm",
    "synth_make",
    "train_test_split",
    "zscore_fit",
    "zscore_apply",
    "DualKernelClassifier",
    "DualKernelRegressor",
    "KernelSpec",
    "RffMap",
    "kernel_block",
    "median_heuristic",
    "rff_map",
    "rff_sample",
    "LOSS_NAMES",
    "make_loss",
    "DualProblem",
    "OvrModel",
    "TrainedModel",
    "load_model",
    "save_model",
    "ovr_predict",
    "ovr_train",
    "predict_label",
    "predict_proba",
    "predict_raw",
    "train",
    "DivergenceError",
    "TrustRegionConfig",
    "dbcd_train",
    "partition_blocks",
]
