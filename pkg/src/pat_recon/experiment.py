"""End-to-end experiment runner: phantom, forward data, reconstruction, evaluation.

Artifacts written to ``config.output_dir``:

==========================  ==========================================
``phantom.pgm`` (+ .json)    ground-truth image, 16-bit
``phantom_preview.pgm``      8-bit preview
``sinogram.csv``             one line per sensor
``sinogram.f64`` (+ .json)   raw little-endian float64 traces
``recon.pgm`` (+ .json)      reconstruction, 16-bit
``recon_preview.pgm``        8-bit preview
``recon.f64`` (+ .json)      reconstruction values at full precision
``coefficients.f64``         wavelet coefficients (SL0 and BP only)
``profile_phantom.csv``      center-row profile of the phantom
``profile_recon.csv``        center-row profile of the reconstruction
``psnr.json``                PSNR report
``trace.csv``                objective trace
``manifest.json``            resolved config, fingerprints, artifact list
``timing.json``              wall-clock timings (not deterministic)
==========================  ==========================================

The model matrix is cached under ``cache_dir`` (default
``<output_dir>/cache``) in a file named after its fingerprint.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .errors import ConvergenceError, InvalidArgumentError
from .forward import (ModelMatrix, Sinogram, add_noise, apply_forward, build_model_matrix,
                      fingerprint)
from .grid import Image, default_ellipse_table, load_ellipse_table, shepp_logan
from .metrics import lateral_profile, psnr
from .solvers import reconstruct

__all__ = ["run_experiment", "compare_experiments", "load_or_build_model", "make_phantom",
           "simulate"]

log = logging.getLogger(__name__)


def _sha(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def make_phantom(config: ExperimentConfig) -> Image:
    table = default_ellipse_table() if config.phantom_table == "builtin" \
        else load_ellipse_table(config.phantom_table)
    return shepp_logan(config.grid, table)


def load_or_build_model(config: ExperimentConfig, workers: int = 1) -> ModelMatrix:
    """Reuse a cached model matrix when its fingerprint matches, else rebuild it."""
    fp = fingerprint(config.grid, config.sensors, config.acquisition)
    cache_dir = config.cache_dir or (config.output_dir / "cache")
    path = Path(cache_dir) / f"model-{fp[:20]}.csr"
    if path.exists():
        try:
            model = io.load_model_matrix(path, fp, config.grid, config.sensors,
                                         config.acquisition)
            log.info("loaded model matrix from %s", path)
            return model
        except (InvalidArgumentError, OSError, ValueError) as exc:
            log.warning("discarding model cache %s: %s", path, exc)
    model = build_model_matrix(config.grid, config.sensors, config.acquisition,
                               workers=workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    io.save_model_matrix(path, model)
    return model


def simulate(config: ExperimentConfig, model: ModelMatrix, phantom: Image) -> Sinogram:
    y = apply_forward(model, phantom)
    if config.snr_db is not None:
        y = add_noise(y, config.snr_db, config.seed)
    return y


def _write_image_set(out: Path, stem: str, image: Image) -> list[Path]:
    paths = [io.write_pgm(out / f"{stem}.pgm", image),
             io.write_pgm_preview(out / f"{stem}_preview.pgm", image),
             io.write_raw(out / f"{stem}.f64", image.values, {"grid": image.grid.to_dict()})]
    return paths


def run_experiment(config: ExperimentConfig, workers: int = 1, model: ModelMatrix | None = None,
                   stages=("phantom", "forward", "reconstruct", "evaluate"),
                   sinogram: Sinogram | None = None) -> dict:
    """Run the pipeline and return the manifest.

    ``stages`` can stop early (e.g. only ``phantom`` and ``forward``).  A
    solver :class:`ConvergenceError` still writes whatever artifacts exist,
    records the error in the manifest and is then re-raised.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}
    artifacts = []
    manifest = {"name": config.name, "config": config.resolved(), "artifacts": artifacts,
                "status": "ok"}

    t0 = time.perf_counter()
    phantom = make_phantom(config)
    manifest["fingerprints"] = {"phantom": _sha(phantom.values)}
    artifacts += _write_image_set(out, "phantom", phantom)
    artifacts.append(io.write_profile_csv(out / "profile_phantom.csv", lateral_profile(phantom)))
    timing["phantom_s"] = time.perf_counter() - t0

    error = None
    if "forward" in stages or "reconstruct" in stages:
        t0 = time.perf_counter()
        if model is None:
            model = load_or_build_model(config, workers)
        elif model.fingerprint != fingerprint(config.grid, config.sensors, config.acquisition):
            raise InvalidArgumentError("supplied model matrix does not match the config")
        manifest["fingerprints"]["model"] = model.fingerprint
        timing["model_s"] = time.perf_counter() - t0
        if sinogram is None:
            sinogram = simulate(config, model, phantom)
        elif sinogram.values.size != model.rows:
            raise InvalidArgumentError("supplied sinogram does not match the model size")
        manifest["fingerprints"]["sinogram"] = _sha(sinogram.values)
        artifacts.append(io.write_sinogram_csv(out / "sinogram.csv", sinogram))
        artifacts.append(io.write_sinogram_raw(out / "sinogram.f64", sinogram,
                                               {"acquisition": config.acquisition.to_dict()}))

    if "reconstruct" in stages:
        t0 = time.perf_counter()
        try:
            result = reconstruct(config.method, model, config.basis, sinogram, config.params,
                                 seed=config.seed)
        except ConvergenceError as exc:
            error = exc
            result = exc.best
            manifest["status"] = "error"
            manifest["error"] = {"type": "ConvergenceError", "message": str(exc)}
        timing["reconstruct_s"] = time.perf_counter() - t0
        if result is not None:
            artifacts += _write_image_set(out, "recon", result.image)
            if result.coefficients is not None:
                artifacts.append(io.write_raw(out / "coefficients.f64", result.coefficients,
                                              {"basis": config.basis.to_dict()}))
            artifacts.append(io.write_trace_csv(out / "trace.csv", result.objective_trace))
            manifest["result"] = {"method": result.method,
                                  "iterations_run": result.iterations_run,
                                  "residual_norm": result.residual_norm,
                                  "converged": result.converged}
            manifest["fingerprints"]["recon"] = _sha(result.image.values)
            if "evaluate" in stages:
                report = psnr(result.image, phantom)
                artifacts.append(io.write_psnr_json(out / "psnr.json", report))
                artifacts.append(io.write_profile_csv(out / "profile_recon.csv",
                                                      lateral_profile(result.image)))
                manifest["psnr_db"] = report.psnr_db

    manifest["artifacts"] = sorted(Path(p).name for p in artifacts)
    io.write_json(out / "manifest.json", manifest)
    io.write_json(out / "timing.json", timing)
    manifest["timing"] = timing
    if error is not None:
        raise error
    return manifest


def compare_experiments(configs: list[ExperimentConfig], out_dir, workers: int = 1) -> list[dict]:
    """Run several configs on a shared grid and phantom; write a PSNR table.

    Produces ``comparison.json`` and ``comparison.csv`` in ``out_dir``.
    """
    if not configs:
        raise InvalidArgumentError("nothing to compare")
    first = configs[0]
    ref = make_phantom(first)
    for cfg in configs[1:]:
        if cfg.grid != first.grid:
            raise InvalidArgumentError(f"config {cfg.name!r} uses a different grid")
        if not np.array_equal(make_phantom(cfg).values, ref.values):
            raise InvalidArgumentError(f"config {cfg.name!r} uses a different phantom")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models = {}
    rows = []
    for cfg in configs:
        # runtime includes assembly (or cache load) for the first run on each model
        t0 = time.perf_counter()
        fp = fingerprint(cfg.grid, cfg.sensors, cfg.acquisition)
        model = models.get(fp)
        if model is None:
            # keep only the model in use; Gram factorizations are large
            models.clear()
            model = models[fp] = load_or_build_model(cfg, workers)
        manifest = run_experiment(cfg, workers=workers, model=model)
        rows.append({"name": cfg.name, "method": cfg.method, "noa": cfg.sensors.count,
                     "samples": cfg.acquisition.num_samples,
                     "sampling_freq": cfg.acquisition.sampling_freq,
                     "psnr_db": manifest.get("psnr_db", math.nan),
                     "runtime_s": time.perf_counter() - t0})
    io.write_json(out_dir / "comparison.json", rows)
    with open(out_dir / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
                        for k, v in row.items()})
    return rows
