"""Deterministic uncertainty scores from a magnitude/direction output head.

A regression or classification target ``y`` is split into a magnitude
``R = |y|`` and a unit direction ``d``. The network predicts both, but its
direction is never projected back onto the unit sphere; the deviation
``u = R_hat * | |d_hat| - 1 |`` is the uncertainty score.
"""

import os

# HCM_THREADS caps BLAS threads; only effective before numpy is first imported
_threads = os.environ.get("HCM_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .head import (HCMOutput, TargetDecomposition, decompose, embed_scalar, recompose, scalar_readback,
                   sigma_hat_sq, uncertainty_score)
from .loss import Huber, LossSpec, PowerP, SmoothL1, loss_grad, loss_total
from .calibrate import CalibrationModel, confidence, fit_temperature
from .metrics import MetricsReport, evaluate

__all__ = [
    "HCMOutput", "TargetDecomposition", "decompose", "embed_scalar", "recompose", "scalar_readback",
    "sigma_hat_sq", "uncertainty_score", "Huber", "LossSpec", "PowerP", "SmoothL1", "loss_grad",
    "loss_total", "CalibrationModel", "confidence", "fit_temperature", "MetricsReport", "evaluate",
]
__version__ = "0.1.0"
