"""Dyson-series coefficients, bounds and convergence certificates for an oscillator in a thermal boson bath."""

from .model import (
    DomainError,
    EtaProfiles,
    FormFactor,
    ModelParams,
    Modes,
    PowerLaw,
    QuadratureError,
    Tabulated,
    coth_weighted_norm_sq,
    eta_functionals,
    weighted_norm_sq,
)
from .dyson import (
    ConvergenceReport,
    Method,
    SeriesTerm,
    Verdict,
    bem3d_term,
    bem3d_verdict,
    h2n_direct,
    h2n_linked,
    j_cycle,
    series_report,
)

__all__ = [
    "ConvergenceReport", "DomainError", "EtaProfiles", "FormFactor", "Method", "ModelParams",
    "Modes", "PowerLaw", "QuadratureError", "SeriesTerm", "Tabulated", "Verdict",
    "bem3d_term", "bem3d_verdict", "coth_weighted_norm_sq", "eta_functionals", "h2n_direct",
    "h2n_linked", "j_cycle", "series_report", "weighted_norm_sq",
]
__version__ = "0.1.0"
