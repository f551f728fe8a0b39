"""Cross-sectional HIV incidence estimation from recency assays and prior test results."""

from .assay import (
    CalibrationRecord,
    RitaCharacteristics,
    TestRecentFunction,
    double_cov_integral,
    fit_phi,
    mdri,
    phi_cov,
    phi_eval,
    pt_frr_mc,
    pt_mdri,
    residual_integral,
)
from .errors import DomainError, EstimationError, SchemaError
from .estimators import (
    IncidenceEstimate,
    enhanced_estimate,
    estimate_with_ci,
    only_recent,
    shadow_period,
    standard_estimate,
)
from .recency import pt_recency_indicator
from .sample import CrossSectionRecord, Sample
from .simulate import (
    EpidemicParams,
    GenGammaDelay,
    PriorTestingSpec,
    RecallBiasSpec,
    simulate_calibration_dataset,
    simulate_cross_section,
    solve_ct,
)
from .variance import PlugInMoments, WMoments, delta_method_variance, plug_in_moments, w_moments

__version__ = "0.1.0"

__all__ = [
    "CalibrationRecord", "CrossSectionRecord", "DomainError", "EpidemicParams", "EstimationError",
    "GenGammaDelay", "IncidenceEstimate", "PlugInMoments", "PriorTestingSpec", "RecallBiasSpec",
    "RitaCharacteristics", "Sample", "SchemaError", "TestRecentFunction", "WMoments",
    "delta_method_variance", "double_cov_integral", "enhanced_estimate", "estimate_with_ci",
    "fit_phi", "mdri", "only_recent", "phi_cov", "phi_eval", "plug_in_moments", "pt_frr_mc",
    "pt_mdri", "pt_recency_indicator", "residual_integral", "shadow_period",
    "simulate_calibration_dataset", "simulate_cross_section", "solve_ct", "standard_estimate",
    "w_moments",
]
