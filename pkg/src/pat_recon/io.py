"""File formats: PGM images, sinogram CSV/raw dumps, CSR cache, small CSV tables.

Every binary payload gets a JSON sidecar at ``<path>.json``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .forward import ModelMatrix, Sinogram
from .grid import Image, ImagingGrid
from .metrics import Profile, PsnrReport

__all__ = [
    "CacheMismatchError",
    "sidecar_path",
    "write_json",
    "read_json",
    "write_pgm",
    "read_pgm",
    "write_pgm_preview",
    "write_raw",
    "read_raw",
    "write_sinogram_csv",
    "read_sinogram_csv",
    "write_sinogram_raw",
    "read_sinogram_raw",
    "save_model_matrix",
    "load_model_matrix",
    "write_profile_csv",
    "read_profile_csv",
    "write_trace_csv",
    "write_psnr_json",
    "read_psnr_json",
]

CSR_MAGIC = b"PATCSR01"


class CacheMismatchError(InvalidArgumentError):
    """A model-matrix cache file was built for different inputs."""


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_pgm(path, image: Image, metadata: dict | None = None) -> Path:
    """16-bit big-endian binary PGM, linearly mapping [min, max] to [0, 65535].

    The sidecar keeps the mapping so :func:`read_pgm` can undo it up to
    quantization.  Rows are written top to bottom, i.e. highest y first.
    """
    arr = image.as_array()[::-1]
    lo, hi = float(arr.min()), float(arr.max())
    span = hi - lo
    q = np.zeros(arr.shape) if span == 0 else (arr - lo) / span * 65535.0
    data = np.rint(q).astype(">u2")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (image.grid.nx, image.grid.ny))
        fh.write(data.tobytes())
    meta = {"format": "PGM P5 16-bit big-endian", "value_min": lo, "value_max": hi,
            "maxval": 65535, "row_order": "top row is highest y",
            "grid": image.grid.to_dict()}
    meta.update(metadata or {})
    write_json(sidecar_path(path), meta)
    return path


def _parse_pgm_header(blob: bytes):
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise InvalidArgumentError("not a binary PGM (P5) file")
    return int(fields[1]), int(fields[2]), int(fields[3]), pos + 1


def read_pgm(path) -> Image:
    path = Path(path)
    blob = path.read_bytes()
    width, height, maxval, offset = _parse_pgm_header(blob)
    dtype = ">u2" if maxval > 255 else "u1"
    raw = np.frombuffer(blob, dtype=dtype, count=width * height, offset=offset)
    arr = raw.reshape(height, width)[::-1].astype(float)
    meta_path = sidecar_path(path)
    if meta_path.exists():
        meta = read_json(meta_path)
        grid = ImagingGrid.from_dict(meta["grid"])
        lo, hi = meta["value_min"], meta["value_max"]
        arr = lo + arr / maxval * (hi - lo)
    else:
        grid = ImagingGrid(width, height, 1.0)
        arr = arr / maxval
    return Image(grid, arr)


def write_pgm_preview(path, image: Image) -> Path:
    """8-bit PGM for quick viewing; no sidecar."""
    arr = image.as_array()[::-1]
    lo, hi = float(arr.min()), float(arr.max())
    q = np.zeros(arr.shape) if hi == lo else (arr - lo) / (hi - lo) * 255.0
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (image.grid.nx, image.grid.ny))
        fh.write(np.rint(q).astype("u1").tobytes())
    return path


def write_raw(path, vector, metadata: dict | None = None) -> Path:
    """Little-endian float64 dump plus sidecar."""
    vec = np.asarray(vector, dtype="<f8").ravel()
    path = Path(path)
    path.write_bytes(vec.tobytes())
    meta = {"dtype": "<f8", "length": int(vec.size)}
    meta.update(metadata or {})
    write_json(sidecar_path(path), meta)
    return path


def read_raw(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    vec = np.frombuffer(path.read_bytes(), dtype=meta.get("dtype", "<f8")).astype(float)
    if vec.size != meta["length"]:
        raise InvalidArgumentError(f"{path} holds {vec.size} values, sidecar says {meta['length']}")
    return vec, meta


def write_sinogram_csv(path, sino: Sinogram) -> Path:
    """One line per sensor, one column per time sample."""
    path = Path(path)
    np.savetxt(path, sino.as_array(), delimiter=",", fmt="%.17g")
    return path


def read_sinogram_csv(path) -> Sinogram:
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return Sinogram(arr.ravel(), arr.shape[1])


def write_sinogram_raw(path, sino: Sinogram, metadata: dict | None = None) -> Path:
    meta = {"num_samples": sino.num_samples, "num_sensors": sino.num_sensors,
            "layout": "sensor-major, time-minor"}
    if sino.sensors is not None:
        meta["sensors"] = sino.sensors.to_dict()
    meta.update(metadata or {})
    return write_raw(path, sino.values, meta)


def read_sinogram_raw(path) -> Sinogram:
    vec, meta = read_raw(path)
    return Sinogram(vec, meta["num_samples"])


def save_model_matrix(path, model: ModelMatrix) -> Path:
    """Binary CSR dump: magic, header length, JSON header, indptr, indices, data."""
    mat = model.matrix
    header = json.dumps({"fingerprint": model.fingerprint, "shape": list(mat.shape),
                         "nnz": int(mat.nnz), "num_samples": model.num_samples}).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CSR_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.asarray(mat.indptr, dtype="<i8").tobytes())
        fh.write(np.asarray(mat.indices, dtype="<i8").tobytes())
        fh.write(np.asarray(mat.data, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(CSR_MAGIC)) != CSR_MAGIC:
            raise InvalidArgumentError(f"{path} is not a model-matrix cache")
        (length,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(length))


def load_model_matrix(path, expected_fingerprint: str | None = None, grid=None,
                      sensors=None, acquisition=None) -> ModelMatrix:
    """Load a CSR cache, refusing it when the fingerprint does not match."""
    with open(path, "rb") as fh:
        if fh.read(len(CSR_MAGIC)) != CSR_MAGIC:
            raise InvalidArgumentError(f"{path} is not a model-matrix cache")
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length))
        if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
            raise CacheMismatchError(
                f"cache {path} was built for {header['fingerprint'][:12]}, "
                f"expected {expected_fingerprint[:12]}")
        rows, cols = header["shape"]
        nnz = header["nnz"]
        indptr = np.frombuffer(fh.read(8 * (rows + 1)), dtype="<i8")
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    if indices.size != nnz or data.size != nnz:
        raise InvalidArgumentError(f"cache {path} is truncated")
    mat = sp.csr_matrix((data.copy(), indices.astype(np.int32), indptr.astype(np.int64)),
                        shape=(rows, cols))
    return ModelMatrix(mat, header["num_samples"], grid=grid, sensors=sensors,
                       acquisition=acquisition, fingerprint=header["fingerprint"])


def write_profile_csv(path, profile: Profile) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position_mm", "value"])
        for p, v in zip(profile.positions, profile.values):
            w.writerow([repr(float(p)), repr(float(v))])
    return path


def read_profile_csv(path, axis="row", index=-1) -> Profile:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Profile(axis, index, arr[:, 0], arr[:, 1])


def write_trace_csv(path, trace: list[dict]) -> Path:
    """Objective trace with columns iteration, parameter (sigma/lambda/step), objective, residual."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "parameter", "objective", "residual"])
        for row in trace:
            param = row.get("sigma", row.get("lambda", row.get("step", math.nan)))
            w.writerow([row["iteration"], repr(float(param)), repr(float(row["objective"])),
                        repr(float(row["residual"]))])
    return path


def write_psnr_json(path, report: PsnrReport, extra: dict | None = None) -> Path:
    payload = report.to_dict()
    payload.update(extra or {})
    return write_json(path, payload)


def read_psnr_json(path) -> PsnrReport:
    return PsnrReport.from_dict(read_json(path))
