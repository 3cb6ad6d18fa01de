"""Pipeline stages.  Each stage reads the previous stage's files and writes its own."""
from __future__ import annotations

import logging
import math
import time
from pathlib import Path

import numpy as np

from ..effects import (
    GhostSpawner,
    RuptureEffect,
    ScheduleEffect,
    centroid_depths,
    erosion_schedule,
    heat_deactivation_schedule,
    heat_state,
    match_cells_for_morph,
    morph_cell,
    spawn_ghosts,
)
from ..errors import CVTAnimError, ConfigError, MissingArtifact
from ..geometry import ConvexPolyhedron, RigidTransform, quat_to_matrix
from ..io import load_cvt, read_json, read_point_cloud, save_cvt, write_json, write_obj, write_point_cloud
from ..simulation import GroundPlane, SampledTrajectory, Scene, body_from_polyhedron, default_spring, step
from ..tessellation import optimize_cvt
from ..tessellation.metrics import point_to_surface_error
from ..tracking import (
    Observations,
    Pose,
    build_template,
    deformed_points,
    observation_sites,
    observations_from_cloud,
    track_sequence,
)
from ..volumes import TransformedVolume, volume_from_dict
from .config import ProjectConfig
from .synth import SyntheticSceneSpec, base_shape, synth_sequence

log = logging.getLogger(__name__)


class StageFailure(CVTAnimError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _frame_name(k: int, ext: str) -> str:
    return f"frame_{k:04d}.{ext}"


def _report(cfg: ProjectConfig, stage: str, t0: float, payload: dict) -> dict:
    payload = {"stage": stage, "time_s": time.perf_counter() - t0, **payload}
    write_json(cfg.stage_dir(stage) / "report.json", "stage-report", payload)
    return payload


# ---------------------------------------------------------------- synth

def stage_synth(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    seq = synth_sequence(cfg.synth, cfg.seed)
    out = cfg.stage_dir("synth")
    for k, cloud in enumerate(seq.clouds):
        write_point_cloud(out / _frame_name(k, "ply"), cloud)
    transforms = None
    if seq.transforms is not None:
        transforms = [{name: T.to_list() for name, T in frame.items()} for frame in seq.transforms]
    write_json(out / "sequence.json", "sequence", {
        "spec": cfg.synth.to_dict(), "seed": cfg.seed, "fps": cfg.fps, "frames": len(seq),
        "clouds": [_frame_name(k, "ply") for k in range(len(seq))],
        "volumes": [v.to_dict() for v in seq.volumes], "transforms": transforms,
    })
    return _report(cfg, "synth", t0, {"frames": len(seq), "points_per_frame": cfg.synth.samples})


def load_sequence(cfg: ProjectConfig):
    d = read_json(cfg.stage_dir("synth") / "sequence.json", "sequence")
    base = cfg.stage_dir("synth")
    clouds = [read_point_cloud(base / name) for name in d["clouds"]]
    volumes = [volume_from_dict(v) for v in d["volumes"]] if d.get("volumes") else None
    return d, clouds, volumes


# ---------------------------------------------------------------- tessellate

def stage_tessellate(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    d, clouds, volumes = load_sequence(cfg)
    if not volumes:
        raise MissingArtifact("tessellation needs the volume of the first frame")
    cvt = optimize_cvt(volumes[0], cfg.cvt)
    save_cvt(cfg.stage_dir("tessellate") / "cvt.json", cvt)
    elapsed = time.perf_counter() - t0
    err = point_to_surface_error(clouds[0], cvt)
    return _report(cfg, "tessellate", t0, {
        "cells": len(cvt), "iterations": cfg.cvt.iterations, "energy_history": cvt.energy_history,
        "error_sum": err, "error_mean": err / len(clouds[0]), "cvt_time_s": elapsed,
        "mean_circumradius": cvt.mean_circumradius(),
    })


# ---------------------------------------------------------------- track

def frame_observations(cfg: ProjectConfig, clouds, volumes) -> list[Observations]:
    frames = []
    for k, cloud in enumerate(clouds):
        inner = np.zeros((0, 3))
        if volumes is not None and cfg.inner_points > 0:
            inner = observation_sites(volumes[k], cfg.inner_points, seed=cfg.seed + k)
        frames.append(observations_from_cloud(cloud, inner))
    return frames


def surface_errors(template, poses, volumes) -> list[float]:
    """Mean distance from the deformed template surface points to each true surface."""
    out = []
    for pose, vol in zip(poses, volumes):
        X = deformed_points(template, pose)[template.is_surface]
        out.append(float(np.mean(np.abs(vol.signed_distance(X)))))
    return out


def stage_track(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    _, clouds, volumes = load_sequence(cfg)
    cvt = load_cvt(cfg.stage_dir("tessellate") / "cvt.json")
    template = build_template(cvt, cfg.tracking)
    frames = frame_observations(cfg, clouds, volumes)
    windows = track_sequence(template, frames, cfg.tracking)
    poses = [p for w in windows for p in w.poses]
    write_json(cfg.stage_dir("track") / "poses.json", "poses", {
        "fps": cfg.fps, "cell_patch": template.cell_patch.tolist(),
        "frames": [p.to_list() for p in poses],
        "window_means": [w.mean.to_list() for w in windows],
        "window_energies": [[float(e) for e in w.energies] for w in windows],
    })
    payload = {"frames": len(poses), "patches": template.n_patches,
               "mean_circumradius": template.mean_circumradius}
    if volumes is not None:
        payload["surface_error"] = surface_errors(template, poses, volumes)
    return _report(cfg, "track", t0, payload)


def load_poses(cfg: ProjectConfig):
    d = read_json(cfg.stage_dir("track") / "poses.json", "poses")
    return d, [Pose.from_list(p) for p in d["frames"]], np.asarray(d["cell_patch"], dtype=np.int64)


# ---------------------------------------------------------------- simulate

def cell_trajectories(cvt, poses: list[Pose], cell_patch: np.ndarray, fps: float) -> list[SampledTrajectory]:
    c = cvt.centroids
    times = np.arange(len(poses)) / fps
    pos = np.empty((len(c), len(poses), 3))
    rot = np.empty((len(c), len(poses), 4))
    for f, pose in enumerate(poses):
        for k, T in enumerate(pose.transforms):
            idx = cell_patch == k
            pos[idx, f] = T.apply(c[idx])
            rot[idx, f] = T.rotation
    return [SampledTrajectory(times, pos[i], rot[i]) for i in range(len(c))]


def _hot_cells(spec: dict, cvt) -> np.ndarray:
    F0 = np.zeros(len(cvt))
    if "hot_cells" in spec:
        F0[np.asarray(spec["hot_cells"], dtype=np.int64)] = 1.0
    if "hot_region" in spec:
        lo = np.asarray(spec["hot_region"]["lo"], dtype=float)
        hi = np.asarray(spec["hot_region"]["hi"], dtype=float)
        c = cvt.centroids
        F0[np.all((c >= lo) & (c <= hi), axis=1)] = 1.0
    if not F0.any():
        raise ConfigError("heat effect needs hot_cells or a hot_region containing cells")
    return F0


def build_effects(cfg: ProjectConfig, cvt, bodies, trajectories, duration: float) -> tuple[list, dict]:
    """Simulation hooks for the configured effects, and their schedules for the log."""
    effects, schedules = [], {}
    e = cfg.effects
    try:
        if "rupture" in e:
            effects.append(RuptureEffect(float(e["rupture"]["threshold"])))
        if "heat" in e:
            h = e["heat"]
            st = heat_state(cvt.adjacency, len(cvt), _hot_cells(h, cvt))
            s = heat_deactivation_schedule(st, float(h.get("tau", 0.5)), h.get("exclude", ()),
                                           float(h.get("time_scale", 1.0)))
            schedules["heat"] = s
            effects.append(ScheduleEffect(s))
        if "erosion" in e or "persistence" in e:
            depths = centroid_depths(cvt)
        if "erosion" in e:
            s = erosion_schedule(depths=depths, speed=float(e["erosion"].get("speed", 0.05)))
            s = s.shifted(float(e["erosion"].get("start", 0.0)))
            schedules["erosion"] = s
            effects.append(ScheduleEffect(s))
        if "persistence" in e:
            p = e["persistence"]
            ghosts = spawn_ghosts(duration, float(p["interval"]), float(p.get("slowdown", 0.5)),
                                  float(p.get("lifetime", math.inf)), depths)
            effects.append(GhostSpawner(ghosts, [b.copy() for b in bodies], trajectories,
                                        lambda b, tr: default_spring(b, tr, cfg.scene.spring_period)))
    except KeyError as exc:
        raise ConfigError(f"effect parameter missing: {exc}") from None
    return effects, schedules


def stage_simulate(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    cvt = load_cvt(cfg.stage_dir("tessellate") / "cvt.json")
    d, poses, cell_patch = load_poses(cfg)
    fps = float(d["fps"])
    trajs = cell_trajectories(cvt, poses, cell_patch, fps)
    bodies, springs = [], []
    for i, (cell, tr) in enumerate(zip(cvt.cells, trajs)):
        b = body_from_polyhedron(cell.cell, cfg.scene.density, cell=i,
                                 max_vertices=cfg.simulation.max_hull_vertices)
        x, q, v, w = tr.state(0.0)
        b.position, b.rotation = x, q
        b.velocity, b.angular_velocity = v, w
        bodies.append(b)
        springs.append(default_spring(b, tr, cfg.scene.spring_period))
    ground = cfg.scene.ground
    if ground is None:
        low = min(float(np.min(T.apply(cvt.cells[i].cell.vertices)[:, 1]))
                  for pose in poses for i in range(len(cvt)) for T in (pose[int(cell_patch[i])],))
        ground = low - cfg.scene.ground_gap
    capture = (len(poses) - 1) / fps
    duration = capture + cfg.scene.extra_time
    effects, schedules = build_effects(cfg, cvt, bodies, trajs, capture)
    scene = Scene(bodies, springs, GroundPlane(ground), cfg.simulation, effects=effects)
    dt = cfg.simulation.dt
    n_steps = int(round(duration / dt))
    every = max(1, int(round(1.0 / (fps * dt))))
    frames = []

    def record():
        frames.append({"time": scene.time, "step": scene.step_index,
                       "positions": [b.position.tolist() for b in scene.bodies],
                       "rotations": [b.rotation.tolist() for b in scene.bodies],
                       "active": [scene.spring_active(i) for i in range(len(scene.bodies))]})

    record()
    t_sim = time.perf_counter()
    for k in range(1, n_steps + 1):
        step(scene)
        if k % every == 0:
            record()
    t_sim = time.perf_counter() - t_sim
    write_json(cfg.stage_dir("simulate") / "states.json", "states", {
        "dt": dt, "fps": fps, "ground": ground, "cells": [b.cell for b in scene.bodies],
        "frames": frames, "events": [list(ev) for ev in scene.events],
        "schedules": {k: s.to_dict() for k, s in schedules.items()},
    })
    return _report(cfg, "simulate", t0, {
        "steps": n_steps, "bodies": len(scene.bodies), "deactivated": len(scene.events),
        "time_per_step_s": t_sim / max(n_steps, 1), "logged_frames": len(frames),
    })


# ---------------------------------------------------------------- export

def posed_cells(cvt, cells, positions, rotations) -> list[ConvexPolyhedron]:
    """Cell polyhedra moved so that each centroid sits at its body position."""
    out = []
    for i, x, q in zip(cells, positions, rotations):
        P = cvt.cells[i].cell
        c = cvt.cells[i].centroid
        R = quat_to_matrix(np.asarray(q, dtype=float))
        out.append(ConvexPolyhedron((P.vertices - c) @ R.T + np.asarray(x, dtype=float), P.faces, P.face_labels))
    return out


def export_frames(states: dict, cvt, out_dir, shrink: float = 1.0, every: int = 1) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    cells = states["cells"]
    for k, fr in enumerate(states["frames"][::every]):
        n = len(fr["positions"])
        polys = posed_cells(cvt, cells[:n], fr["positions"], fr["rotations"])
        path = out_dir / _frame_name(k, "obj")
        write_obj(path, polys, shrink)
        paths.append(path)
    return paths


def stage_export(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    cvt = load_cvt(cfg.stage_dir("tessellate") / "cvt.json")
    states = read_json(cfg.stage_dir("simulate") / "states.json", "states")
    paths = export_frames(states, cvt, cfg.stage_dir("export"), cfg.export.shrink, cfg.export.every)
    return _report(cfg, "export", t0, {"files": len(paths)})


# ---------------------------------------------------------------- morph

def _morph_target(cfg: ProjectConfig, spec: dict):
    if "target_cvt" in spec:
        path = Path(spec["target_cvt"])
        if not path.is_absolute():
            path = cfg.root / path
        return load_cvt(path)
    shape = SyntheticSceneSpec(shape=spec.get("target_shape", "sphere"), motion="static",
                               scale=float(spec.get("target_scale", cfg.synth.scale)))
    vol, _ = base_shape(shape)
    offset = np.asarray(spec.get("target_offset", (0.0, 0.0, 0.0)), dtype=float)
    if np.any(offset != 0.0):
        vol = TransformedVolume(vol, RigidTransform.from_translation(offset))
    return optimize_cvt(vol, cfg.cvt)


def stage_morph(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    spec = cfg.effects.get("morph")
    if spec is None:
        raise ConfigError("morph stage needs an effects.morph block")
    src = load_cvt(cfg.stage_dir("tessellate") / "cvt.json")
    src_pose = [RigidTransform.identity()] * len(src)
    track_file = cfg.stage_dir("track") / "poses.json"
    if track_file.exists():
        _, poses, cell_patch = load_poses(cfg)
        src_pose = [poses[-1][int(k)] for k in cell_patch]
    dst = _morph_target(cfg, spec)
    plan = match_cells_for_morph(src, dst, float(spec.get("start", 0.0)), float(spec.get("duration", 1.0)),
                                 spec.get("spread"))
    out = cfg.stage_dir("morph")
    save_cvt(out / "target_cvt.json", dst)
    write_json(out / "plan.json", "morph-plan", plan.to_dict())
    n_frames = int(math.floor(plan.end_time * cfg.fps + 1e-9)) + 1
    every = cfg.export.every
    written = 0
    for k in range(0, n_frames, every):
        u = plan.progress(k / cfg.fps)
        polys = [morph_cell(src.cells[s], src_pose[s], dst.cells[d], None, float(uk)).world()
                 for s, d, uk in zip(plan.source, plan.target, u)]
        write_obj(out / _frame_name(written, "obj"), polys, cfg.export.shrink)
        written += 1
    return _report(cfg, "morph", t0, {"pairs": len(plan), "files": written, "end_time": plan.end_time})


# ---------------------------------------------------------------- report

def report_metrics(cfg: ProjectConfig) -> dict:
    """Collect the stage reports into one metrics document."""
    found = {}
    for stage in ("synth", "tessellate", "track", "simulate", "export", "morph"):
        path = cfg.stage_dir(stage) / "report.json"
        if path.exists():
            found[stage] = read_json(path, "stage-report")
    if not found:
        raise MissingArtifact(f"no stage reports under {cfg.root}")
    metrics: dict = {"stage_time_s": {k: v["time_s"] for k, v in found.items()}}
    if "tessellate" in found:
        t = found["tessellate"]
        metrics["cvt"] = {"iterations": t["iterations"], "error_m": t["error_sum"], "time_s": t["cvt_time_s"],
                          "cells": t["cells"]}
    if "track" in found and "surface_error" in found["track"]:
        metrics["tracking"] = {"mean_surface_error": found["track"]["surface_error"],
                               "mean_circumradius": found["track"]["mean_circumradius"]}
    if "simulate" in found:
        s = found["simulate"]
        metrics["simulation"] = {"steps": s["steps"], "time_per_step_s": s["time_per_step_s"]}
    return metrics


def table_lines(metrics: dict) -> list[str]:
    lines = []
    if "cvt" in metrics:
        c = metrics["cvt"]
        lines.append(f"{'Method':<22}{'Error (m)':>14}{'Time (s)':>12}")
        lines.append(f"{'CVT (%d iter.)' % c['iterations']:<22}{c['error_m']:>14.4f}{c['time_s']:>12.2f}")
    if "tracking" in metrics:
        e = metrics["tracking"]["mean_surface_error"]
        lines.append(f"tracking mean surface error: max {max(e):.5f} m over {len(e)} frames")
    if "simulation" in metrics:
        s = metrics["simulation"]
        lines.append(f"simulation: {s['steps']} steps, {s['time_per_step_s'] * 1e3:.2f} ms per step")
    return lines


def stage_report(cfg: ProjectConfig) -> dict:
    t0 = time.perf_counter()
    metrics = report_metrics(cfg)
    write_json(cfg.root / "report.json", "metrics", metrics)
    for line in table_lines(metrics):
        log.info("%s", line)
    return {"stage": "report", "time_s": time.perf_counter() - t0, "metrics": metrics}


STAGE_FUNCTIONS = {
    "synth": stage_synth, "tessellate": stage_tessellate, "track": stage_track, "simulate": stage_simulate,
    "export": stage_export, "morph": stage_morph, "report": stage_report,
}


def run_stage(cfg: ProjectConfig, stage: str) -> dict:
    try:
        fn = STAGE_FUNCTIONS[stage]
    except KeyError:
        raise ConfigError(f"unknown stage {stage!r}") from None
    log.info("stage %s", stage)
    try:
        return fn(cfg)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageFailure(stage, exc) from exc


def run_pipeline(cfg: ProjectConfig, stages=None) -> list[dict]:
    """Run ``stages`` (default ``cfg.stages``) in order; stops at the first failure."""
    return [run_stage(cfg, s) for s in (cfg.stages if stages is None else stages)]


__all__ = ["STAGE_FUNCTIONS", "StageFailure", "cell_trajectories", "export_frames", "frame_observations",
           "load_poses", "load_sequence", "posed_cells", "report_metrics", "run_pipeline", "run_stage",
           "surface_errors", "table_lines"]
