"""Marked Hawkes processes with one-hidden-layer network kernels.

Simulation by thinning, maximum-likelihood fitting with closed-form
compensators, Gaussian-mixture mark densities, and calibration diagnostics.
"""

from .errors import HawkesError, NumericError, ValidationError
from .evaluate import kernel_grid, pit_values, predict, qq_curve
from .integrate import (
    integrate_kernel_exp,
    integrated_ground_intensity,
    integrated_ground_intensity_nnnh,
    integrated_ground_intensity_snh,
)
from .marks import GmmDensity, fit_gmm, gmm_pdf, mark_log_likelihood
from .model import (
    EventSequence,
    HawkesModel,
    KernelNet,
    Link,
    MarkedEvent,
    ModelKind,
    ScalingTransform,
    apply_scaling,
    eval_ground_intensity,
    eval_kernel,
)
from .simulate import GeneratorSpec, sample_mark, simulate
from .train import FitConfig, TrainTrace, event_gradient, fit, init_model, log_likelihood_ground

__version__ = "0.1.0"
