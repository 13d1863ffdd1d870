"""Deterministic planar articulated-locomotion world with parameterized terrain."""

from .terrain import (
    EnvParams,
    Heightfield,
    generate_terrain,
    roughness,
    terrain_height,
    heightfield_to_dict,
    heightfield_from_dict,
)
from .world import World, StepResult, WorldState, BodyModel, observation_width

__all__ = [
    "EnvParams",
    "Heightfield",
    "generate_terrain",
    "roughness",
    "terrain_height",
    "heightfield_to_dict",
    "heightfield_from_dict",
    "World",
    "StepResult",
    "WorldState",
    "BodyModel",
    "observation_width",
]
