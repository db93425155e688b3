from .base import KINDS, FittedModel, LearnerSpec, fit
from .crossfit import (OofPredictions, crossfit_predict, crossfit_predict_arrays,
                       crossfit_r2, fullsample_predict_arrays, stack_weights)
from .trees import backend_name

__all__ = [
    "KINDS", "FittedModel", "LearnerSpec", "fit",
    "OofPredictions", "crossfit_predict", "crossfit_predict_arrays",
    "crossfit_r2", "fullsample_predict_arrays", "stack_weights",
    "backend_name",
]
