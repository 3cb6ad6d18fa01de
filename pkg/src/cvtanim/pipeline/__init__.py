"""Stage orchestration, synthetic scenes and metrics."""
from .config import DEFAULT_STAGES, STAGES, ExportSettings, ProjectConfig, SimulationSettings, load_config
from .stages import (
    StageFailure,
    export_frames,
    report_metrics,
    run_pipeline,
    run_stage,
    surface_errors,
)
from .synth import FrameSequence, SyntheticSceneSpec, base_shape, sample_surface, synth_sequence

__all__ = [
    "DEFAULT_STAGES", "ExportSettings", "FrameSequence", "ProjectConfig", "STAGES", "SimulationSettings",
    "StageFailure", "SyntheticSceneSpec", "base_shape", "export_frames", "load_config", "report_metrics",
    "run_pipeline", "run_stage", "sample_surface", "surface_errors", "synth_sequence",
]
