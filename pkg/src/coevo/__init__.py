"""coevo: a desk-scale laboratory for morphology-environment co-evolution.

An articulated 2D agent, its control policy, a morphology-editing policy,
and a terrain-generating policy are trained together: the agent learns to
locomote, the morphology mutates when return improvement stalls, and the
terrain hardens when learning progress stalls, producing an automatic
curriculum.
"""

from .config import ExperimentConfig, GAP_CROSSER, ROUGH_TERRAIN
from .engine import Engine
from .morphology import Morphology, MorphAction, initial_morphology

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ROUGH_TERRAIN",
    "GAP_CROSSER",
    "Engine",
    "Morphology",
    "MorphAction",
    "initial_morphology",
    "__version__",
]
