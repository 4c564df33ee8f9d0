"""Image quality figures: PSNR on peak-normalized images and line profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .grid import Image

__all__ = ["PsnrReport", "Profile", "psnr", "lateral_profile", "profile_nrmse"]


@dataclass(frozen=True)
class PsnrReport:
    """``psnr_db`` is ``math.inf`` for identical images (written as ``"inf"`` in JSON)."""

    psnr_db: float
    mse: float
    normalization: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
                "mse": self.mse, "normalization": dict(self.normalization)}

    @classmethod
    def from_dict(cls, d: dict) -> "PsnrReport":
        val = d["psnr_db"]
        return cls(math.inf if val == "inf" else float(val), float(d["mse"]),
                   dict(d.get("normalization", {})))


@dataclass(frozen=True, eq=False)
class Profile:
    axis: str
    index: int
    positions: np.ndarray
    values: np.ndarray


def psnr(recon: Image, reference: Image) -> PsnrReport:
    """PSNR in dB after dividing both images by the reference maximum.

    With unit peak the formula is ``10 log10(Nx Ny / sum((f - r)^2))``.
    """
    if recon.grid != reference.grid:
        raise InvalidArgumentError("PSNR needs images on the same grid")
    peak = float(np.max(reference.values))
    if peak <= 0.0:
        # a reference with no positive maximum (all zero) has no peak to normalize by
        if not np.any(reference.values):
            raise InvalidArgumentError("reference image is all zero")
        peak = float(np.max(np.abs(reference.values)))
    f = recon.values / peak
    r = reference.values / peak
    err = float(np.sum((f - r) ** 2))
    mse = err / f.size
    db = math.inf if err == 0.0 else 10.0 * math.log10(f.size / err)
    return PsnrReport(db, mse, {"divisor": peak, "source": "reference max"})


def lateral_profile(image: Image, axis: str = "row", index: int | None = None) -> Profile:
    """Values along one pixel line with physical positions in millimeters.

    ``axis="row"`` fixes ``j`` and runs along x; ``"column"`` fixes ``i``.
    The default line is the center row ``ny // 2``.
    """
    grid = image.grid
    arr = image.as_array()
    if axis == "row":
        index = grid.ny // 2 if index is None else index
        if not 0 <= index < grid.ny:
            raise InvalidArgumentError(f"row {index} outside 0..{grid.ny - 1}")
        return Profile("row", int(index), grid.x_coords() * 1e3, arr[index].copy())
    if axis == "column":
        index = grid.nx // 2 if index is None else index
        if not 0 <= index < grid.nx:
            raise InvalidArgumentError(f"column {index} outside 0..{grid.nx - 1}")
        return Profile("column", int(index), grid.y_coords() * 1e3, arr[:, index].copy())
    raise InvalidArgumentError(f"axis must be 'row' or 'column', got {axis!r}")


def profile_nrmse(profile: Profile, reference: Profile) -> float:
    """``|p - r| / |r|`` between two profiles of the same line."""
    if profile.values.shape != reference.values.shape:
        raise InvalidArgumentError("profiles have different lengths")
    denom = np.linalg.norm(reference.values)
    if denom == 0.0:
        raise InvalidArgumentError("reference profile is all zero")
    return float(np.linalg.norm(profile.values - reference.values) / denom)
