from .bodies import (
    PendulumTrajectory,
    RecallSpring,
    RigidBody,
    SampledTrajectory,
    SimConfig,
    StaticTarget,
    body_from_cell,
    body_from_polyhedron,
    default_spring,
    recall_force,
)
from .collision import (
    AABBTree,
    Contact,
    GJKResult,
    GroundPlane,
    Penetration,
    body_contacts,
    broad_phase,
    epa_penetration,
    gjk_distance,
    ground_contacts,
)
from .world import Scene, detect_contacts, run, snapshot, solve_contacts, step

__all__ = [
    "AABBTree", "Contact", "GJKResult", "GroundPlane", "PendulumTrajectory", "Penetration",
    "RecallSpring", "RigidBody", "SampledTrajectory", "Scene", "SimConfig", "StaticTarget",
    "body_contacts", "body_from_cell", "body_from_polyhedron", "broad_phase", "default_spring",
    "detect_contacts", "epa_penetration", "gjk_distance", "ground_contacts", "recall_force", "run",
    "snapshot", "solve_contacts", "step",
]
