"""Imaging grid, Modified Shepp-Logan phantom and circular sensor placement.

Pixel ``(i, j)`` has ``i`` running along x and ``j`` along y.  Image values
are stored row-major, i.e. ``values[j * nx + i]``, so ``values.reshape(ny, nx)``
gives an array indexed ``[j, i]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "ImagingGrid",
    "Image",
    "SensorArray",
    "EllipseSpec",
    "make_grid",
    "make_sensor_array",
    "load_ellipse_table",
    "default_ellipse_table",
    "shepp_logan",
    "phantom_scale",
]


@dataclass(frozen=True)
class ImagingGrid:
    nx: int
    ny: int
    pixel_size: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise InvalidArgumentError("grid dimensions must be integers")
        if self.nx < 1 or self.ny < 1:
            raise InvalidArgumentError(f"grid dimensions must be >= 1, got {self.nx}x{self.ny}")
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise InvalidArgumentError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny, nx)`` of a reshaped image."""
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float]:
        """Physical width and height covered by the pixels."""
        return (self.nx * self.pixel_size, self.ny * self.pixel_size)

    def x_coords(self) -> np.ndarray:
        return self.center[0] + (np.arange(self.nx) - (self.nx - 1) / 2) * self.pixel_size

    def y_coords(self) -> np.ndarray:
        return self.center[1] + (np.arange(self.ny) - (self.ny - 1) / 2) * self.pixel_size

    def pixel_center(self, i, j):
        """Physical center of pixel ``(i, j)``; works elementwise on arrays."""
        x = self.center[0] + (np.asarray(i) - (self.nx - 1) / 2) * self.pixel_size
        y = self.center[1] + (np.asarray(j) - (self.ny - 1) / 2) * self.pixel_size
        return x, y

    def nearest_index(self, x, y):
        """Inverse of :meth:`pixel_center`, rounding to the closest lattice point."""
        i = np.rint((np.asarray(x) - self.center[0]) / self.pixel_size + (self.nx - 1) / 2)
        j = np.rint((np.asarray(y) - self.center[1]) / self.pixel_size + (self.ny - 1) / 2)
        return i.astype(int), j.astype(int)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (row-major) x and y coordinates of every pixel center."""
        xx, yy = np.meshgrid(self.x_coords(), self.y_coords())
        return xx.ravel(), yy.ravel()

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "pixel_size": self.pixel_size,
                "center": list(self.center)}

    @classmethod
    def from_dict(cls, d: dict) -> "ImagingGrid":
        return cls(d["nx"], d["ny"], d["pixel_size"], tuple(d.get("center", (0.0, 0.0))))


@dataclass(frozen=True, eq=False)
class Image:
    grid: ImagingGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.size:
            raise InvalidArgumentError(
                f"image has {values.size} values, grid needs {self.grid.size}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("image values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        """Values as a ``(ny, nx)`` array indexed ``[j, i]``."""
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class SensorArray:
    radius: float
    angles: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        angles = np.array(self.angles, dtype=float).ravel()
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidArgumentError(f"sensor radius must be positive, got {self.radius}")
        if angles.size < 1:
            raise InvalidArgumentError("sensor array needs at least one detector")
        if np.any(angles < 0) or np.any(angles >= 2 * np.pi) or np.any(np.diff(angles) <= 0):
            raise InvalidArgumentError("sensor angles must be strictly increasing in [0, 2*pi)")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def count(self) -> int:
        return int(self.angles.size)

    def positions(self) -> np.ndarray:
        """``(count, 2)`` array of detector coordinates."""
        return np.column_stack([
            self.center[0] + self.radius * np.cos(self.angles),
            self.center[1] + self.radius * np.sin(self.angles),
        ])

    def to_dict(self) -> dict:
        return {"radius": self.radius, "count": self.count,
                "angles": self.angles.tolist(), "center": list(self.center)}


@dataclass(frozen=True)
class EllipseSpec:
    """One ellipse of a phantom table.

    Axes and center are in table units where the outer ellipse semi-major
    axis is of order one; ``rotation`` is counter-clockwise, in radians.
    """

    intensity: float
    semi_axis_a: float
    semi_axis_b: float
    center_x: float = 0.0
    center_y: float = 0.0
    rotation: float = 0.0

    def __post_init__(self):
        if not (self.semi_axis_a > 0 and self.semi_axis_b > 0):
            raise InvalidArgumentError("ellipse semi-axes must be positive")

    def contains(self, x, y):
        """Membership test (boundary included) in table units."""
        dx = np.asarray(x) - self.center_x
        dy = np.asarray(y) - self.center_y
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        u = (dx * c + dy * s) / self.semi_axis_a
        v = (-dx * s + dy * c) / self.semi_axis_b
        return u * u + v * v <= 1.0


def make_grid(nx: int, ny: int, pixel_size: float) -> ImagingGrid:
    """Grid of ``nx`` by ``ny`` square pixels centered at the origin."""
    return ImagingGrid(nx, ny, pixel_size)


def make_sensor_array(radius: float, count: int, start_angle: float = 0.0) -> SensorArray:
    """Place ``count`` point detectors uniformly on a circle around the origin.

    Angles are wrapped into ``[0, 2*pi)`` and sorted, so the detector at
    ``start_angle`` comes first whenever ``start_angle < 2*pi/count``.
    """
    if int(count) != count or count < 1:
        raise InvalidArgumentError(f"sensor count must be a positive integer, got {count}")
    if not (radius > 0):
        raise InvalidArgumentError(f"sensor radius must be positive, got {radius}")
    angles = np.mod(start_angle + 2 * np.pi * np.arange(int(count)) / count, 2 * np.pi)
    # mod can return exactly 2*pi for tiny negative inputs
    angles[angles >= 2 * np.pi] = 0.0
    return SensorArray(float(radius), np.sort(angles))


def load_ellipse_table(path) -> list[EllipseSpec]:
    with open(path) as fh:
        records = json.load(fh)
    return [EllipseSpec(**rec) for rec in records]


def default_ellipse_table() -> list[EllipseSpec]:
    """The ten-ellipse Modified Shepp-Logan table shipped with the package."""
    ref = resources.files("pat_recon").joinpath("data/modified_shepp_logan.json")
    with ref.open() as fh:
        return [EllipseSpec(**rec) for rec in json.load(fh)]


def phantom_scale(grid: ImagingGrid, table: list[EllipseSpec]) -> float:
    """Meters per table unit.

    The first ellipse is treated as the outer boundary; its semi-major axis
    is mapped to 0.9 of half the smaller grid side.
    """
    outer = table[0]
    half = 0.5 * min(grid.nx, grid.ny) * grid.pixel_size
    return 0.9 * half / max(outer.semi_axis_a, outer.semi_axis_b)


def shepp_logan(grid: ImagingGrid, table: list[EllipseSpec] | None = None) -> Image:
    """Rasterize the phantom by point membership at pixel centers."""
    if table is None:
        table = default_ellipse_table()
    scale = phantom_scale(grid, table)
    x, y = grid.pixel_centers()
    x = (x - grid.center[0]) / scale
    y = (y - grid.center[1]) / scale
    acc = np.zeros(grid.size)
    for ell in table:
        acc[ell.contains(x, y)] += ell.intensity
    return Image(grid, np.maximum(acc, 0.0))
