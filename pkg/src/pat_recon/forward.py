"""Discrete photoacoustic forward model for a circular array of point detectors.

A delta heating pulse turns the pressure at a detector into the time
derivative of a spherical-shell integral of the absorption map.  Each pixel
acts as a point source: it is spread over the two time bins bracketing its
arrival time (linear interpolation), weighted by ``pixel_size**2 / d``, and
each sensor trace is then differentiated with a central difference.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, TruncationWarning
from .grid import ImagingGrid, SensorArray

__all__ = [
    "AcquisitionConfig",
    "ModelMatrix",
    "Sinogram",
    "build_model_matrix",
    "apply_forward",
    "apply_adjoint",
    "add_noise",
    "time_derivative_matrix",
    "fingerprint",
]

# Bump when the discretization changes so stale caches are never reused.
MODEL_VERSION = "shell-tri-cdiff-v1"


@dataclass(frozen=True)
class AcquisitionConfig:
    sound_speed: float = 1540.0
    sampling_freq: float = 55e6
    num_samples: int = 600
    t_start: float = 0.0
    amplitude_constant: float = 1.0

    def __post_init__(self):
        if not (self.sound_speed > 0):
            raise InvalidArgumentError("sound_speed must be positive")
        if not (self.sampling_freq > 0):
            raise InvalidArgumentError("sampling_freq must be positive")
        if int(self.num_samples) != self.num_samples or self.num_samples < 2:
            raise InvalidArgumentError("num_samples must be an integer >= 2")
        if not (self.t_start >= 0):
            raise InvalidArgumentError("t_start must be >= 0")
        if not math.isfinite(self.amplitude_constant):
            raise InvalidArgumentError("amplitude_constant must be finite")
        object.__setattr__(self, "num_samples", int(self.num_samples))

    @property
    def sample_times(self) -> np.ndarray:
        return self.t_start + np.arange(self.num_samples) / self.sampling_freq

    @property
    def max_range(self) -> float:
        """Largest source distance observed inside the window."""
        return self.sound_speed * (self.t_start + (self.num_samples - 1) / self.sampling_freq)

    def to_dict(self) -> dict:
        return {"sound_speed": self.sound_speed, "sampling_freq": self.sampling_freq,
                "num_samples": self.num_samples, "t_start": self.t_start,
                "amplitude_constant": self.amplitude_constant}


def fingerprint(grid: ImagingGrid, sensors: SensorArray, acq: AcquisitionConfig) -> str:
    """Stable hash of everything the model matrix depends on."""
    payload = {"version": MODEL_VERSION, "grid": grid.to_dict(),
               "sensors": sensors.to_dict(), "acquisition": acq.to_dict()}
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


class ModelMatrix:
    """Sparse operator mapping an image vector to stacked sensor traces.

    Rows are ordered sensor-major: row ``q * num_samples + k`` is sample
    ``k`` of sensor ``q``.
    """

    def __init__(self, matrix, num_samples=None, grid=None, sensors=None,
                 acquisition=None, fingerprint=None):
        mat = sp.csr_matrix(matrix, dtype=np.float64)
        mat.sort_indices()
        self.matrix = mat
        self.num_samples = int(num_samples) if num_samples is not None else mat.shape[0]
        if mat.shape[0] % self.num_samples:
            raise InvalidArgumentError("row count is not a multiple of num_samples")
        self.grid = grid
        self.sensors = sensors
        self.acquisition = acquisition
        self.fingerprint = fingerprint
        self._norm_estimate = None

    @classmethod
    def from_matrix(cls, matrix) -> "ModelMatrix":
        """Wrap an arbitrary dense or sparse matrix, mostly for tests."""
        return cls(matrix)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_sensors(self) -> int:
        return self.rows // self.num_samples

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.cols:
            raise InvalidArgumentError(f"expected image vector of length {self.cols}, got {x.size}")
        return self.matrix @ x

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.rows:
            raise InvalidArgumentError(f"expected data vector of length {self.rows}, got {y.size}")
        # csr.T is csc with the same arrays; the product order is fixed, so
        # the result is reproducible run to run
        return self.matrix.T @ y

    def block(self, q: int) -> sp.csr_matrix:
        """Rows belonging to sensor ``q``."""
        n = self.num_samples
        return self.matrix[q * n:(q + 1) * n]


@dataclass(frozen=True, eq=False)
class Sinogram:
    values: np.ndarray
    num_samples: int
    sensors: SensorArray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if self.num_samples < 1 or values.size % self.num_samples:
            raise InvalidArgumentError("sinogram length must be a multiple of num_samples")
        if self.sensors is not None and values.size != self.sensors.count * self.num_samples:
            raise InvalidArgumentError("sinogram length does not match sensor count")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("sinogram values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_sensors(self) -> int:
        return self.values.size // self.num_samples

    def as_array(self) -> np.ndarray:
        """``(num_sensors, num_samples)`` view of the traces."""
        return self.values.reshape(self.num_sensors, self.num_samples)


def time_derivative_matrix(num_samples: int, sampling_freq: float) -> sp.csr_matrix:
    """Central difference in time, one-sided at both ends, scaled by ``sampling_freq``."""
    n = int(num_samples)
    rows, cols, vals = [], [], []
    rows += [0, 0]
    cols += [0, 1]
    vals += [-1.0, 1.0]
    k = np.arange(1, n - 1)
    rows += list(np.repeat(k, 2))
    cols += list(np.column_stack([k - 1, k + 1]).ravel())
    vals += [-0.5, 0.5] * (n - 2)
    rows += [n - 1, n - 1]
    cols += [n - 2, n - 1]
    vals += [-1.0, 1.0]
    d = sp.csr_matrix((np.asarray(vals) * sampling_freq, (rows, cols)), shape=(n, n))
    d.sum_duplicates()
    return d


def _shell_block(px, py, sensor_xy, acq, pixel_size):
    """Interpolated shell-integration rows (before differentiation) for one sensor."""
    n = acq.num_samples
    d = np.hypot(px - sensor_xy[0], py - sensor_xy[1])
    u = (d / acq.sound_speed - acq.t_start) * acq.sampling_freq
    k0 = np.floor(u)
    frac = u - k0
    k0 = k0.astype(np.int64)
    # 1/d is bounded at half a pixel: a pixel is not a true point source
    amp = acq.amplitude_constant * pixel_size ** 2 / np.maximum(d, 0.5 * pixel_size)
    cols = np.arange(px.size)
    rows = np.concatenate([k0, k0 + 1])
    cols = np.concatenate([cols, cols])
    vals = np.concatenate([amp * (1.0 - frac), amp * frac])
    keep = (rows >= 0) & (rows < n) & (vals != 0.0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, px.size))


def build_model_matrix(grid: ImagingGrid, sensors: SensorArray, acq: AcquisitionConfig,
                       workers: int = 1) -> ModelMatrix:
    """Assemble ``K = D S`` block by block, one block per sensor.

    Emits :class:`TruncationWarning` when some pixel lies beyond the
    distance covered by the sampling window; those contributions are cut.
    """
    px, py = grid.pixel_centers()
    positions = sensors.positions()
    dmax = max(np.hypot(px - sx, py - sy).max() for sx, sy in positions)
    if dmax > acq.max_range:
        warnings.warn(
            f"sampling window reaches {acq.max_range * 1e3:.3f} mm but the farthest pixel is "
            f"{dmax * 1e3:.3f} mm from a sensor; late arrivals are truncated",
            TruncationWarning, stacklevel=2)
    deriv = time_derivative_matrix(acq.num_samples, acq.sampling_freq)

    def one(q):
        blk = (deriv @ _shell_block(px, py, positions[q], acq, grid.pixel_size)).tocsr()
        blk.sort_indices()
        return blk

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(one, range(sensors.count)))
    else:
        blocks = [one(q) for q in range(sensors.count)]
    mat = sp.vstack(blocks, format="csr")
    mat.eliminate_zeros()
    return ModelMatrix(mat, acq.num_samples, grid=grid, sensors=sensors, acquisition=acq,
                       fingerprint=fingerprint(grid, sensors, acq))


def _values(v):
    return np.asarray(getattr(v, "values", v), dtype=float).ravel()


def apply_forward(model: ModelMatrix, x) -> Sinogram:
    """``y = K x`` for an :class:`~pat_recon.grid.Image` or plain vector."""
    y = model.forward(_values(x))
    return Sinogram(y, model.num_samples, model.sensors)


def apply_adjoint(model: ModelMatrix, y) -> np.ndarray:
    """``K^T y`` as a flat image vector."""
    return model.adjoint(_values(y))


def add_noise(y: Sinogram, snr_db: float | None, seed: int = 0) -> Sinogram:
    """Add white Gaussian noise at an exact signal-to-noise ratio.

    ``snr_db`` of ``None`` or ``inf`` returns the data unchanged.  The noise
    realization is rescaled so ``10 log10(|y|^2 / |w|^2)`` equals ``snr_db``.
    """
    values = _values(y)
    if snr_db is None or math.isinf(snr_db) and snr_db > 0:
        return y if isinstance(y, Sinogram) else Sinogram(values, values.size)
    power = float(values @ values)
    if power == 0.0:
        raise InvalidArgumentError("cannot set an SNR relative to an all-zero signal")
    w = np.random.default_rng(seed).standard_normal(values.size)
    w *= math.sqrt(power / 10 ** (snr_db / 10) / float(w @ w))
    num_samples = y.num_samples if isinstance(y, Sinogram) else values.size
    sensors = y.sensors if isinstance(y, Sinogram) else None
    return Sinogram(values + w, num_samples, sensors)
