"""Procedural effects layered on the simulation: rupture, heat, erosion, persistence, morphing."""
from .erosion import centroid_depths, erosion_schedule
from .ghosts import GhostInstance, GhostSpawner, GhostTrajectory, spawn_ghosts
from .heat import EIG_LIMIT, HeatState, graph_laplacian, heat_deactivation_schedule, heat_evolve, heat_state
from .morph import MORPH_DIRECTIONS, MorphedCell, MorphPlan, match_cells_for_morph, morph_cell, proportional_map
from .rupture import RuptureEffect, rupture_check
from .schedule import NEVER, EffectSchedule, ScheduleEffect

__all__ = [
    "EIG_LIMIT", "NEVER", "EffectSchedule", "GhostInstance", "GhostSpawner", "GhostTrajectory", "HeatState",
    "MORPH_DIRECTIONS", "MorphPlan", "MorphedCell", "RuptureEffect", "ScheduleEffect", "centroid_depths",
    "erosion_schedule", "graph_laplacian", "heat_deactivation_schedule", "heat_evolve", "heat_state",
    "match_cells_for_morph", "morph_cell", "proportional_map", "rupture_check", "spawn_ghosts",
]
