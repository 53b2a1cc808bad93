"""Generalized multi-kernel maximum correntropy Kalman filtering for disturbance estimation."""

from .correntropy import (ERROR_FLOOR, UNBOUNDED, KernelConfig, convex_radius, fixed_point_weight,
                          gcim, ggd_kernel, gl_loss, gl_loss_samples, influence_gl, influence_lmp,
                          lmp_loss)
from .filters import (AugmentedModel, FilterState, GmkmckfConfig, GmkmckfObserver, KalmanObserver,
                      LinearModel, RegressionForm, build_regression, gmkmckf_update, kf_predict,
                      kf_update, regression_fixed_point)
from .convergence import Certificate, ConvergenceQuery, beta_plus, beta_star, certify, phi, psi, xi_bound
from .noise import Gaussian, Laplace, Mixture, Uniform, Zero, fit_gaussian_mse, gl_pdf, noise_from_dict
from .config import ExperimentConfig, ObserverSpec, gaussian_preset, laplace_preset, load_config
from .experiment import RunReport, bounds_report, parameter_sweep, rmse, run_monte_carlo

__version__ = "0.1.0"
