"""Sharp bounds on the distribution of treatment effects Pr(Y1 - Y0 <= delta)."""
from .distributions import (ChiSquare, Chi2NormalConvolution, MarginalDistribution, Normal, NormalMixture, StepCDF,
                            Uniform, from_spec, shift)
from .estimation import DTEBoundsEstimator, SampleData, SubsampleConfig, empirical_marginals, plugin_bounds
from .makarov import BoundsCurve, makarov_curve, makarov_lower, makarov_upper
from .mtr import MtrOptions, equal_spacing_value, mtr_curve, mtr_lower, mtr_upper
from .restrictions import RestrictionSpec, ShapeContext
from .roy import RoyContext, roy_bounds, roy_conditional_bounds
from .shape import concave_bounds, convex_bounds

__version__ = "0.1.0"

__all__ = [
    "BoundsCurve", "ChiSquare", "Chi2NormalConvolution", "DTEBoundsEstimator", "MarginalDistribution", "MtrOptions",
    "Normal", "NormalMixture", "RestrictionSpec", "RoyContext", "SampleData", "ShapeContext", "StepCDF",
    "SubsampleConfig", "Uniform", "concave_bounds", "convex_bounds", "empirical_marginals", "equal_spacing_value",
    "from_spec", "makarov_curve", "makarov_lower", "makarov_upper", "mtr_curve", "mtr_lower", "mtr_upper",
    "plugin_bounds", "roy_bounds", "roy_conditional_bounds", "shift",
]
