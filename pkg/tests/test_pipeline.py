from __future__ import annotations

import dataclasses
import json
import math
import shutil

import numpy as np
import pytest

from cvtanim.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from cvtanim.errors import ConfigError, MissingArtifact
from cvtanim.io import read_json, read_obj
from cvtanim.pipeline import (
    ProjectConfig,
    StageFailure,
    SyntheticSceneSpec,
    export_frames,
    load_config,
    report_metrics,
    run_pipeline,
    run_stage,
    synth_sequence,
)
from cvtanim.pipeline.stages import table_lines
from cvtanim.tessellation import CVTConfig, optimize_cvt
from cvtanim.volumes import BoxVolume

TINY = {
    "seed": 2,
    "synth": {"shape": "sphere", "motion": "rigid", "frames": 3, "samples": 400, "velocity": [0.02, 0.0, 0.0]},
    "cvt": {"n_sites": 16, "iterations": 1, "clip_resolution": 4},
    "tracking": {"n_patches": 3, "outer_iterations": 3, "warm_start_iterations": 2},
    "inner_points": 20,
    "simulation": {"dt": 0.01},
    "scene": {"extra_time": 0.05},
    "effects": {"erosion": {"speed": 20.0}},
}


def tiny_config(workdir, **over) -> ProjectConfig:
    d = {**TINY, "workdir": str(workdir), **over}
    return ProjectConfig.from_dict(d)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = tiny_config(root / "a")
    results = run_pipeline(cfg)
    return cfg, results


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def test_synth_rigid_translation():
    spec = SyntheticSceneSpec(shape="sphere", motion="rigid", frames=10, samples=500, velocity=(0.1, 0.0, 0.0))
    seq = synth_sequence(spec, seed=1)
    assert len(seq) == 10
    np.testing.assert_allclose(seq.clouds[9].points, seq.clouds[0].points + [0.9, 0.0, 0.0], atol=1e-12)
    for cloud, tr in zip(seq.clouds, seq.transforms):
        np.testing.assert_allclose(tr["body"].apply(seq.clouds[0].points), cloud.points, atol=1e-12)


def test_synth_bend_zero_is_static():
    bend = synth_sequence(SyntheticSceneSpec(motion="bend", bend_angle=0.0, frames=3, samples=300), seed=4)
    static = synth_sequence(SyntheticSceneSpec(motion="static", frames=3, samples=300), seed=4)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, size=(2000, 3))
    for vb, vs in zip(bend.volumes, static.volumes):
        db, ds = vb.signed_distance(x), vs.signed_distance(x)
        # same point set; a union only bounds the depth inside
        np.testing.assert_array_equal(db > 0, ds > 0)
        np.testing.assert_allclose(db[ds > 0], ds[ds > 0], atol=1e-12)
    for c in bend.clouds:
        assert np.abs(static.volumes[0].signed_distance(c.points)).max() < 1e-9


def test_synth_noise_half_normal_mean():
    sigma = 0.005
    spec = SyntheticSceneSpec(shape="sphere", motion="static", frames=1, samples=40000, noise=sigma)
    seq = synth_sequence(spec, seed=3)
    d = np.abs(seq.volumes[0].signed_distance(seq.clouds[0].points))
    expected = sigma * math.sqrt(2.0 / math.pi)
    assert expected == pytest.approx(0.00399, abs=1e-5)
    assert d.mean() == pytest.approx(expected, rel=0.02)


def test_synth_determinism_and_normals():
    spec = SyntheticSceneSpec(shape="two-lobe", motion="stretch", frames=2, samples=300)
    a, b = synth_sequence(spec, 5), synth_sequence(spec, 5)
    for ca, cb in zip(a.clouds, b.clouds):
        np.testing.assert_array_equal(ca.points, cb.points)
        np.testing.assert_allclose(np.linalg.norm(ca.normals, axis=1), 1.0, atol=1e-12)
    for shape in ("sphere", "capsule", "two-lobe", "cylinder"):
        seq = synth_sequence(SyntheticSceneSpec(shape=shape, motion="static", frames=1, samples=200), 0)
        assert np.abs(seq.volumes[0].signed_distance(seq.clouds[0].points)).max() < 1e-9


def test_synth_spec_validation():
    for bad in (dict(frames=0), dict(noise=-1.0), dict(shape="torus"), dict(motion="spin"),
                dict(shape="sphere", motion="bend")):
        with pytest.raises(ConfigError):
            SyntheticSceneSpec(**bad)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict({"cvt": {"n_sites": 0}})
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict({"effects": {"lava": {}}})
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict({"stages": ["synth", "paint"]})
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict({"fps": 0})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path)
    again = ProjectConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, "workdir": "w"}))
    assert load_config(path).root == tmp_path / "w"
    assert cfg.with_seed(9).cvt.seed == 9


def test_missing_effect_parameter(tmp_path):
    cfg = tiny_config(tmp_path, effects={"rupture": {}})
    run_pipeline(cfg, ["synth", "tessellate", "track"])
    with pytest.raises(ConfigError):
        run_stage(cfg, "simulate")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def test_tessellate_only(tmp_path):
    cfg = tiny_config(tmp_path)
    run_stage(cfg, "synth")
    r = run_stage(cfg, "tessellate")
    assert (cfg.stage_dir("tessellate") / "cvt.json").exists()
    assert len(r["energy_history"]) == cfg.cvt.iterations + 1
    assert not cfg.stage_dir("track").exists()


def test_stage_without_inputs_fails(tmp_path):
    cfg = tiny_config(tmp_path)
    with pytest.raises(StageFailure) as info:
        run_stage(cfg, "track")
    assert info.value.stage == "track"
    assert isinstance(info.value.cause, MissingArtifact)


def test_full_run_artifacts(tiny_run):
    cfg, results = tiny_run
    assert [r["stage"] for r in results] == list(cfg.stages)
    states = read_json(cfg.stage_dir("simulate") / "states.json", "states")
    objs = sorted(cfg.stage_dir("export").glob("*.obj"))
    assert len(objs) == len(states["frames"]) > 1
    assert (cfg.root / "report.json").exists()
    # erosion deactivates every cell well within the simulated time
    assert all(not a for a in states["frames"][-1]["active"])


def test_deactivated_cells_fall(tiny_run):
    cfg, _ = tiny_run
    states = read_json(cfg.stage_dir("simulate") / "states.json", "states")
    y0 = np.array(states["frames"][0]["positions"])[:, 1]
    y1 = np.array(states["frames"][-1]["positions"])[:, 1]
    assert np.mean(y1 - y0) < 0.0


def test_stage_isolation_and_determinism(tiny_run, tmp_path):
    cfg, _ = tiny_run
    copy = tmp_path / "copy"
    shutil.copytree(cfg.root, copy)
    cfg_b = dataclasses.replace(cfg, workdir=str(copy))
    run_stage(cfg_b, "simulate")
    for rel in ("track/poses.json", "simulate/states.json"):
        assert (copy / rel).read_bytes() == (cfg.root / rel).read_bytes()
    fresh = dataclasses.replace(cfg, workdir=str(tmp_path / "fresh"))
    run_pipeline(fresh, ["synth", "tessellate", "track", "simulate"])
    for rel in ("track/poses.json", "simulate/states.json"):
        assert (tmp_path / "fresh" / rel).read_bytes() == (cfg.root / rel).read_bytes()


def test_report_metrics(tiny_run, tmp_path):
    cfg, _ = tiny_run
    m = report_metrics(cfg)
    assert set(m["stage_time_s"]) >= {"synth", "tessellate", "track", "simulate", "export"}
    assert m["cvt"]["error_m"] > 0.0
    assert len(m["tracking"]["mean_surface_error"]) == cfg.synth.frames
    lines = table_lines(m)
    assert "Error (m)" in lines[0] and "Time (s)" in lines[0]
    with pytest.raises(MissingArtifact):
        report_metrics(tiny_config(tmp_path / "empty"))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cube_cvt():
    return optimize_cvt(BoxVolume(), CVTConfig(n_sites=1, iterations=0, seed=0))


def test_export_single_cube(cube_cvt, tmp_path):
    c = cube_cvt.cells[0].centroid
    states = {"cells": [0], "frames": [{"positions": [c.tolist()], "rotations": [[1.0, 0.0, 0.0, 0.0]]}]}
    (path,) = export_frames(states, cube_cvt, tmp_path)
    text = path.read_text().splitlines()
    verts = [l for l in text if l.startswith("v ")]
    faces = [l for l in text if l.startswith("f ")]
    assert len(verts) == 8
    assert (len(faces), max(len(f.split()) - 1 for f in faces)) in ((6, 4), (12, 3))
    mesh = read_obj(path)
    np.testing.assert_allclose(np.sort(mesh.vertices, axis=0), np.sort(cube_cvt.cells[0].cell.vertices, axis=0),
                               atol=1e-8)


def test_export_shrink(cube_cvt, tmp_path):
    c = cube_cvt.cells[0].centroid
    states = {"cells": [0], "frames": [{"positions": [c.tolist()], "rotations": [[1.0, 0.0, 0.0, 0.0]]}]}
    (path,) = export_frames(states, cube_cvt, tmp_path, shrink=0.9)
    V = read_obj(path).vertices
    expected = c + 0.9 * (cube_cvt.cells[0].cell.vertices - c)
    np.testing.assert_allclose(np.sort(V, axis=0), np.sort(expected, axis=0), atol=1e-8)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cvt": {"n_sites": -3}}))
    assert main(["tessellate", "--config", str(bad)]) == EXIT_CONFIG
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "workdir": "w"}))
    assert main(["track", "--config", str(cfg)]) == EXIT_STAGE
    assert main(["synth", "--config", str(cfg), "--seed", "4", "--threads", "1"]) == EXIT_OK
    assert (tmp_path / "w" / "synth" / "sequence.json").exists()
    assert read_json(tmp_path / "w" / "synth" / "sequence.json")["seed"] == 4
    assert main(["report", "--config", str(cfg)]) == EXIT_OK
    assert main(["synth", "--config", str(cfg), "--threads", "0"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["paint", "--config", str(cfg)])
