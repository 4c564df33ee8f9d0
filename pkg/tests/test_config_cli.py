import json
import math

import numpy as np
import pytest

from pat_recon import io
from pat_recon.cli import main
from pat_recon.config import PRESETS, ConfigError, load_config, parse_config, preset_configs
from pat_recon.errors import ConvergenceError
from pat_recon.experiment import compare_experiments, load_or_build_model, run_experiment
from pat_recon.solvers import BpParams, IrParams, Sl0Params

TINY = {
    "name": "tiny",
    "grid": {"nx": 16, "ny": 16, "pixel_size": 1e-4},
    "sensors": {"radius": 1.2e-3, "count": 8},
    "acquisition": {"num_samples": 90},
    "basis": {"levels": 2},
    "method": "SL0",
    "params": {"sigma_min_ratio": 1e-3},
}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def _cfg(tmp_path, **over):
    doc = json.loads(json.dumps(TINY))
    doc.update(over)
    doc.setdefault("output_dir", str(tmp_path / "out"))
    return parse_config(doc)


def test_defaults_are_reference_setup():
    cfg = parse_config({"method": "ir"})
    assert (cfg.grid.nx, cfg.grid.ny, cfg.grid.pixel_size) == (128, 128, 1e-4)
    assert cfg.sensors.radius == 8e-3 and cfg.sensors.count == 16
    assert cfg.acquisition.num_samples == 600 and cfg.acquisition.sampling_freq == 55e6
    assert cfg.acquisition.sound_speed == 1540.0
    assert cfg.method == "IR" and isinstance(cfg.params, IrParams)
    assert cfg.basis.levels == 3 and cfg.snr_db is None


def test_noa_zero_rejected_with_line(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc["sensors"]["count"] = 0
    doc["output_dir"] = str(tmp_path / "never")
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    line = next(n for n, text in enumerate(path.read_text().splitlines(), 1) if '"count"' in text)
    assert info.value.line == line
    assert f"{path}:{line}:" in str(info.value)
    assert main(["run", "--config", str(path)]) == 2
    assert not (tmp_path / "never").exists()


@pytest.mark.parametrize("doc,key", [
    ({"method": "SL0", "colour": 1}, "colour"),
    ({"method": "SL0", "grid": {"nx": 8, "nz": 4}}, "nz"),
    ({"method": "SL0", "params": {"sigma": 1}}, "sigma"),
    ({"method": "BP", "params": {"iterations": 3}}, "iterations"),
])
def test_unknown_keys_rejected(tmp_path, doc, key):
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError, match=key) as info:
        load_config(path)
    assert info.value.line is not None


@pytest.mark.parametrize("doc", [
    {},
    {"method": "ART"},
    {"method": "SL0", "grid": {"nx": 0}},
    {"method": "SL0", "seed": -1},
    {"method": "SL0", "acquisition": {"sampling_freq": -5}},
    {"method": "SL0", "grid": {"nx": 100}},
    {"method": "SL0", "noise": {"snr_db": "loud"}},
    {"method": "SL0", "phantom": {"table": "/nonexistent.json"}},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_bad_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "method": "SL0",\n  oops\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3
    assert main(["run", "--config", str(path)]) == 2


def test_presets():
    (e,) = preset_configs("fig2e")
    assert e.method == "SL0" and e.sensors.count == 16
    assert e.acquisition.num_samples == 600 and e.acquisition.sampling_freq == 55e6
    fig4 = preset_configs("fig4")
    assert [c.method for c in fig4] == ["SL0", "BP"]
    assert all(c.acquisition.num_samples == 500 and c.acquisition.sampling_freq == 45e6
               for c in fig4)
    fig2 = preset_configs("fig2", output_dir="o")
    assert [c.name for c in fig2] == ["fig2a", "fig2b", "fig2c", "fig2d", "fig2e"]
    assert [(c.method, c.sensors.count) for c in fig2] == [
        ("IR", 32), ("IR", 64), ("IR", 64), ("BP", 16), ("SL0", 16)]
    assert [c.params.iterations for c in fig2[:3]] == [20, 1, 20]
    assert str(fig2[0].output_dir) == "o/fig2a"
    with pytest.raises(ConfigError):
        preset_configs("fig9")
    assert {"fig2a", "fig2b", "fig2c", "fig2d", "fig2e", "fig4", "desk"} <= set(PRESETS)


def test_run_writes_artifacts(tmp_path):
    cfg = _cfg(tmp_path)
    manifest = run_experiment(cfg)
    out = tmp_path / "out"
    expected = {"phantom.pgm", "sinogram.csv", "sinogram.f64", "recon.pgm", "recon.f64",
                "profile_phantom.csv", "profile_recon.csv", "psnr.json", "trace.csv",
                "coefficients.f64"}
    assert expected <= set(manifest["artifacts"])
    for name in expected | {"manifest.json", "timing.json", "recon.pgm.json"}:
        assert (out / name).exists(), name
    disk = io.read_json(out / "manifest.json")
    assert disk["config"]["sensors"]["count"] == 8
    assert disk["config"]["acquisition"]["sampling_freq"] == 55e6
    assert disk["status"] == "ok" and math.isfinite(disk["psnr_db"])
    assert disk["psnr_db"] == pytest.approx(io.read_psnr_json(out / "psnr.json").psnr_db)


def test_manifest_fingerprint_matches_cache(tmp_path):
    cfg = _cfg(tmp_path)
    manifest = run_experiment(cfg)
    (cache,) = (tmp_path / "out" / "cache").glob("model-*.csr")
    assert io.read_model_header(cache)["fingerprint"] == manifest["fingerprints"]["model"]


def test_stale_cache_is_rebuilt(tmp_path):
    cfg = _cfg(tmp_path)
    good = load_or_build_model(cfg)
    (cache,) = (tmp_path / "out" / "cache").glob("model-*.csr")
    other = _cfg(tmp_path, acquisition={"num_samples": 91})
    io.save_model_matrix(cache, load_or_build_model(other))   # wrong contents, same name
    again = load_or_build_model(cfg)
    assert again.fingerprint == good.fingerprint
    assert (again.matrix != good.matrix).nnz == 0
    assert io.read_model_header(cache)["fingerprint"] == good.fingerprint


@pytest.mark.parametrize("over", [{}, {"method": "IR", "params": {}, "noise": {"snr_db": 30}}])
def test_bit_identical_reruns(tmp_path, over):
    a = run_experiment(_cfg(tmp_path, output_dir=str(tmp_path / "a"), **over))
    b = run_experiment(_cfg(tmp_path, output_dir=str(tmp_path / "b"), **over))
    a.pop("timing"), b.pop("timing")
    a["config"].pop("output_dir"), b["config"].pop("output_dir")
    assert a == b
    for name in a["artifacts"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_noise_seed_changes_data(tmp_path):
    noisy = {"method": "IR", "params": {}, "noise": {"snr_db": 30}}
    a = run_experiment(_cfg(tmp_path, output_dir=str(tmp_path / "a"), **noisy))
    b = run_experiment(_cfg(tmp_path, output_dir=str(tmp_path / "b"), seed=9, **noisy))
    assert a["fingerprints"]["sinogram"] != b["fingerprints"]["sinogram"]


def test_exact_projection_refuses_noisy_overdetermined_data(tmp_path):
    with pytest.raises(ConvergenceError):
        run_experiment(_cfg(tmp_path, noise={"snr_db": 30}))
    assert io.read_json(tmp_path / "out" / "manifest.json")["status"] == "error"


def test_convergence_error_keeps_partial_artifacts(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc.update(method="BP", params={"max_iterations": 3}, output_dir=str(tmp_path / "bp"))
    path = _write(tmp_path, doc)
    assert main(["run", "--config", str(path)]) == 3
    manifest = io.read_json(tmp_path / "bp" / "manifest.json")
    assert manifest["status"] == "error"
    assert manifest["error"]["type"] == "ConvergenceError"
    assert (tmp_path / "bp" / "recon.pgm").exists()


def test_compare_tables(tmp_path):
    ir = _cfg(tmp_path, name="ir", method="IR", params={"iterations": 5},
              output_dir=str(tmp_path / "c" / "ir"))
    sl0 = _cfg(tmp_path, output_dir=str(tmp_path / "c" / "tiny"))
    rows = compare_experiments([ir, sl0], tmp_path / "c")
    assert [r["name"] for r in rows] == ["ir", "tiny"]
    assert set(rows[0]) == {"name", "method", "noa", "samples", "sampling_freq", "psnr_db",
                            "runtime_s"}
    lines = (tmp_path / "c" / "comparison.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("name,method,noa,samples")
    one = compare_experiments([ir], tmp_path / "one")
    assert len(one) == 1 and one[0]["psnr_db"] == rows[0]["psnr_db"]
    twice = compare_experiments([ir, ir], tmp_path / "two")
    assert twice[0]["psnr_db"] == twice[1]["psnr_db"]


def test_compare_rejects_mismatched_grids(tmp_path):
    a = _cfg(tmp_path)
    b = _cfg(tmp_path, grid={"nx": 32, "ny": 32, "pixel_size": 1e-4})
    with pytest.raises(Exception, match="grid"):
        compare_experiments([a, b], tmp_path / "x")


def test_cli_subcommands(tmp_path, capsys):
    path = _write(tmp_path, dict(TINY, method="IR", params={"iterations": 3}))
    out = tmp_path / "cli"
    assert main(["phantom", "--config", str(path), "--out", str(out / "p")]) == 0
    assert (out / "p" / "phantom.pgm").exists() and not (out / "p" / "sinogram.csv").exists()
    assert main(["forward", "--config", str(path), "--out", str(out / "f")]) == 0
    assert (out / "f" / "sinogram.csv").exists() and not (out / "f" / "recon.pgm").exists()
    assert main(["reconstruct", "--config", str(path), "--out", str(out / "r"),
                 "--sinogram", str(out / "f" / "sinogram.f64")]) == 0
    assert (out / "r" / "recon.pgm").exists() and not (out / "r" / "psnr.json").exists()
    assert main(["run", "--config", str(path), "--out", str(out / "run"), "--seed", "3",
                 "--threads", "2"]) == 0
    assert io.read_json(out / "run" / "manifest.json")["config"]["seed"] == 3
    capsys.readouterr()
    assert main(["evaluate", str(out / "run" / "recon.f64"), str(out / "run" / "phantom.f64"),
                 "--out", str(out / "ev")]) == 0
    report = json.loads(capsys.readouterr().out)
    ref = io.read_psnr_json(out / "run" / "psnr.json").psnr_db
    assert report["psnr_db"] == pytest.approx(ref, rel=1e-12)
    assert (out / "ev" / "profile_reference.csv").exists()
    assert main(["compare", "--config", str(path), "--config", str(path),
                 "--out", str(out / "cmp")]) == 0
    assert (out / "cmp" / "comparison.json").exists()


def test_cli_reconstruct_from_csv_matches_simulation(tmp_path):
    path = _write(tmp_path, dict(TINY, method="IR", params={"iterations": 3}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["reconstruct", "--config", str(path), "--out", str(tmp_path / "b"),
                 "--sinogram", str(tmp_path / "a" / "sinogram.csv")]) == 0
    ra, _ = io.read_raw(tmp_path / "a" / "recon.f64")
    rb, _ = io.read_raw(tmp_path / "b" / "recon.f64")
    assert np.array_equal(ra, rb)


def test_cli_requires_source(tmp_path):
    assert main(["run"]) == 2
    assert main(["run", "--preset", "nope"]) == 2
    assert main(["evaluate", str(tmp_path / "a.f64"), str(tmp_path / "b.f64")]) == 1


def test_param_types():
    assert isinstance(parse_config({"method": "bp"}).params, BpParams)
    assert isinstance(parse_config({"method": "sl0"}).params, Sl0Params)
