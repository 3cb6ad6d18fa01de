"""Project configuration: one JSON document driving every stage."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..simulation.bodies import SimConfig
from ..tessellation.types import CVTConfig
from ..tracking.types import TrackingConfig
from .synth import SyntheticSceneSpec

STAGES = ("synth", "tessellate", "track", "simulate", "export", "morph", "report")
DEFAULT_STAGES = ("synth", "tessellate", "track", "simulate", "export", "report")
EFFECT_KINDS = ("rupture", "heat", "erosion", "persistence", "morph")


def _build(cls, d: dict | None, name: str):
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    if "gravity" in d:
        d["gravity"] = tuple(float(x) for x in d["gravity"])
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


@dataclass(frozen=True)
class SimulationSettings:
    """Scene assembly options beyond the integrator settings."""

    density: float = 1000.0
    spring_period: float = 0.2
    ground: float | None = None
    ground_gap: float = 0.02
    extra_time: float = 0.5

    def __post_init__(self):
        if self.density <= 0.0 or self.spring_period <= 0.0 or self.extra_time < 0.0:
            raise ValueError("density and spring_period must be > 0, extra_time >= 0")


@dataclass(frozen=True)
class ExportSettings:
    shrink: float = 1.0
    every: int = 1

    def __post_init__(self):
        if not 0.0 < self.shrink <= 1.0:
            raise ValueError("shrink must lie in (0, 1]")
        if self.every < 1:
            raise ValueError("every must be >= 1")


@dataclass(frozen=True)
class ProjectConfig:
    """Stage settings and artifact locations.

    ``workdir`` holds one subdirectory per stage.  Frame rates are in frames
    per second.  ``inner_points`` is the number of inner observation points
    per frame.
    """

    workdir: str = "run"
    seed: int = 0
    fps: float = 50.0
    stages: tuple = DEFAULT_STAGES
    synth: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    cvt: CVTConfig = field(default_factory=CVTConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    inner_points: int = 500
    simulation: SimConfig = field(default_factory=SimConfig)
    scene: SimulationSettings = field(default_factory=SimulationSettings)
    effects: dict = field(default_factory=dict)
    export: ExportSettings = field(default_factory=ExportSettings)

    def __post_init__(self):
        if not self.fps > 0.0:
            raise ConfigError("fps must be > 0")
        if self.inner_points < 0:
            raise ConfigError("inner_points must be >= 0")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}")
        bad = [k for k in self.effects if k not in EFFECT_KINDS]
        if bad:
            raise ConfigError(f"unknown effects {bad}")

    @property
    def root(self) -> Path:
        return Path(self.workdir)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def with_seed(self, seed: int) -> ProjectConfig:
        return dataclasses.replace(
            self, seed=seed,
            cvt=dataclasses.replace(self.cvt, seed=seed),
            tracking=dataclasses.replace(self.tracking, seed=seed))

    def to_dict(self) -> dict:
        return {
            "workdir": self.workdir, "seed": self.seed, "fps": self.fps, "stages": list(self.stages),
            "synth": self.synth.to_dict(), "cvt": dataclasses.asdict(self.cvt),
            "tracking": dataclasses.asdict(self.tracking), "inner_points": self.inner_points,
            "simulation": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in dataclasses.asdict(self.simulation).items()},
            "scene": dataclasses.asdict(self.scene), "effects": self.effects,
            "export": dataclasses.asdict(self.export),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> ProjectConfig:
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}")
        workdir = str(d.get("workdir", "run"))
        if base_dir is not None and not Path(workdir).is_absolute():
            workdir = str(Path(base_dir) / workdir)
        try:
            synth = SyntheticSceneSpec.from_dict(d.get("synth", {}))
            return cls(
                workdir=workdir,
                seed=int(d.get("seed", 0)),
                fps=float(d.get("fps", 50.0)),
                stages=tuple(d.get("stages", DEFAULT_STAGES)),
                synth=synth,
                cvt=_build(CVTConfig, d.get("cvt"), "cvt"),
                tracking=_build(TrackingConfig, d.get("tracking"), "tracking"),
                inner_points=int(d.get("inner_points", 500)),
                simulation=_build(SimConfig, d.get("simulation"), "simulation"),
                scene=_build(SimulationSettings, d.get("scene"), "scene"),
                effects=dict(d.get("effects", {})),
                export=_build(ExportSettings, d.get("export"), "export"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> ProjectConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} not found")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ProjectConfig.from_dict(d, base_dir=path.parent)


__all__ = ["DEFAULT_STAGES", "EFFECT_KINDS", "ExportSettings", "ProjectConfig", "STAGES",
           "SimulationSettings", "load_config"]
