"""Operator networks that learn an oscillator's gradient field from narrow-band
data and extrapolate full frequency response curves by implicit forecasting."""

__version__ = "0.1.0"

from .oscillator import (ForcingSpec, NyquistError, SystemParams, Trajectory,  # noqa: E402
                         analytic_response, analytic_trajectory, reference_integrate,
                         steady_amplitude)
from .network import OperatorNetwork, init_network, jacobian, load, save  # noqa: E402
from .trainer import BruCurriculum, ModelSpec, TrainingConfig, fit_system, train  # noqa: E402
from .forecast import ForecastConfig, default_backend, forecast, forecast_batch  # noqa: E402
from .frc import (FrcConfig, FrcCurve, closed_form_frc, compute_frc, frc_metrics,  # noqa: E402
                  time_metrics)
from .stability import (SweepSpec, divergence_check, equilibrium_eigenvalues,  # noqa: E402
                        nyquist_limits, root_locus, run_sweep)

__all__ = [
    "BruCurriculum", "ForcingSpec", "ForecastConfig", "FrcConfig", "FrcCurve", "ModelSpec",
    "NyquistError", "OperatorNetwork", "SweepSpec", "SystemParams", "TrainingConfig",
    "Trajectory", "analytic_response", "analytic_trajectory", "closed_form_frc", "compute_frc",
    "default_backend", "divergence_check", "equilibrium_eigenvalues", "fit_system", "forecast",
    "forecast_batch", "frc_metrics", "init_network", "jacobian", "load", "nyquist_limits",
    "reference_integrate", "root_locus", "run_sweep", "save", "steady_amplitude",
    "time_metrics", "train",
]
