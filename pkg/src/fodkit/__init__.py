"""Sparse needlet FOD estimation for diffusion MRI, with a simulation benchmark."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError, FodkitError, MissingArtifactError, NumericalError
from .sphere import SHBasis, SphericalGrid, UnitDirection, axial_angle, evaluation_grid, gradient_grid
from .needlets import NeedletFrame, build_frame, build_window
from .convolution import DesignProblem, ResponseFunction, assemble_design
from .admm import AdmmConfig, ConstrainedLasso
from .estimators import FODEstimate, LambdaGrid, SelectionParams, fit_sh_ridge, fit_sn_lasso, fit_super_csd
from .peaks import PeakSet, detect_peaks, match_peaks
from .simulation import Scenario, make_scenario, simulate_replicate
from .evaluation import hellinger, score_trial, summarize
from .config import RunConfig

__all__ = [
    "__version__",
    "FodkitError", "ConfigurationError", "DomainError", "MissingArtifactError", "NumericalError",
    "SHBasis", "SphericalGrid", "UnitDirection", "axial_angle", "evaluation_grid", "gradient_grid",
    "NeedletFrame", "build_frame", "build_window",
    "DesignProblem", "ResponseFunction", "assemble_design",
    "AdmmConfig", "ConstrainedLasso",
    "FODEstimate", "LambdaGrid", "SelectionParams", "fit_sh_ridge", "fit_sn_lasso", "fit_super_csd",
    "PeakSet", "detect_peaks", "match_peaks",
    "Scenario", "make_scenario", "simulate_replicate",
    "hellinger", "score_trial", "summarize",
    "RunConfig",
]
