"""popctrl: a numerical laboratory for null controllability of age-size-space
structured population models.

Forward and adjoint solvers built on the method of characteristics, a
penalized-HUM controller with localized support, and experiment harnesses
for transit-time formulas, adjoint-trace vanishing, and minimal-time
comparisons between birth-kernel variants.
"""

__version__ = "0.1.0"

from .characteristics import CharacteristicsTable, Region
from .errors import PopctrlError
from .grids import Grid, StateField, grid_for_spec, inner_product
from .model import (ControlRegion, CriticalSizes, DiffusionSpec,
                    FertilityKernel, GrowthModel, ModelSpec, MortalityModel,
                    TransitTimes, critical_sizes, load_spec, minimal_time,
                    spec_from_json, spec_to_json, transit_times, validate)

__all__ = [
    "__version__", "PopctrlError",
    "CharacteristicsTable", "Region", "Grid", "StateField", "grid_for_spec",
    "inner_product",
    "ModelSpec", "GrowthModel", "MortalityModel", "FertilityKernel",
    "DiffusionSpec", "ControlRegion", "TransitTimes", "CriticalSizes",
    "validate", "transit_times", "critical_sizes", "minimal_time",
    "spec_from_json", "spec_to_json", "load_spec",
]
