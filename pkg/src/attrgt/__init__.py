"""Ground-truth evaluation of feature attributions via dataset modification.

Labels are reassigned so that original features cap achievable accuracy,
then class-specific manipulations inject the only features that can beat
the cap. Attribution methods are scored by how much of their mass lands on
those known regions.
"""
__version__ = "0.1.0"

from .core import (AttributionMap, EffectiveRegion, GroundTruthSpec, Instance, ReassignmentMatrix,
                   load_instances, read_attributions, save_instances, write_attributions)
from .errors import (AttrGTError, ConfigError, DimensionError, FormatError, SizeError, TrainingError,
                     UndefinedMetricError)

__all__ = [
    "AttributionMap", "EffectiveRegion", "GroundTruthSpec", "Instance", "ReassignmentMatrix",
    "load_instances", "read_attributions", "save_instances", "write_attributions",
    "AttrGTError", "ConfigError", "DimensionError", "FormatError", "SizeError", "TrainingError",
    "UndefinedMetricError", "__version__",
]
