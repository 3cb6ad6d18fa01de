from .solver import (
    associate,
    cell_acquired_poses,
    data_energy,
    deform_point,
    deformed_normals,
    deformed_points,
    mean_pose,
    pose_distance,
    prior_energy,
    render_template,
    resample_poses,
    track_sequence,
    track_window,
)
from .template import (
    build_template,
    cell_surface_points,
    cluster_patches,
    observation_sites,
    observations_from_cloud,
    observations_from_cvt,
    patch_pairs,
    site_depths,
)
from .types import (
    Association,
    Associations,
    Observations,
    Patch,
    Pose,
    PoseSequence,
    Template,
    TrackingConfig,
    default_patch_count,
)

__all__ = [
    "Association", "Associations", "Observations", "Patch", "Pose", "PoseSequence", "Template",
    "TrackingConfig", "associate", "build_template", "cell_acquired_poses", "cell_surface_points",
    "cluster_patches", "data_energy", "default_patch_count", "deform_point", "deformed_normals",
    "deformed_points", "mean_pose", "observation_sites", "observations_from_cloud", "observations_from_cvt",
    "patch_pairs", "pose_distance", "prior_energy", "render_template", "resample_poses", "site_depths",
    "track_sequence", "track_window",
]
