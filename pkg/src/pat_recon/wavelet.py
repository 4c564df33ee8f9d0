"""Orthonormal 2-D Haar basis and the compressed-sensing operator ``A = K phi``.

Coefficient layout is level-major, coarsest level first::

    [LL_J, LH_J, HL_J, HH_J, LH_{J-1}, HL_{J-1}, HH_{J-1}, ..., HH_1]

with each subband flattened row-major.  The first letter names the filter
applied along x (within a row), the second the filter along y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["WaveletBasis", "CsOperator", "wavelet_analyze", "wavelet_synthesize",
           "subband_slices"]

_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class WaveletBasis:
    nx: int
    ny: int
    levels: int = 3
    family: str = "haar"

    def __post_init__(self):
        if self.family.lower() != "haar":
            raise InvalidArgumentError(f"unsupported wavelet family {self.family!r}")
        if self.levels < 0:
            raise InvalidArgumentError("levels must be >= 0")
        step = 2 ** self.levels
        if self.nx < 1 or self.ny < 1 or self.nx % step or self.ny % step:
            raise InvalidArgumentError(
                f"image {self.nx}x{self.ny} is not divisible by 2**{self.levels}")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def analyze(self, x) -> np.ndarray:
        return wavelet_analyze(x, self)

    def synthesize(self, theta) -> np.ndarray:
        return wavelet_synthesize(theta, self)

    def to_dict(self) -> dict:
        return {"family": self.family, "levels": self.levels, "nx": self.nx, "ny": self.ny,
                "layout": "level-major, coarsest first; subbands LL, LH, HL, HH"}


def _check(vec, basis):
    vec = np.asarray(vec, dtype=float).ravel()
    if vec.size != basis.size:
        raise InvalidArgumentError(f"expected vector of length {basis.size}, got {vec.size}")
    return vec


def subband_slices(basis: WaveletBasis) -> list[tuple[str, int, slice, tuple[int, int]]]:
    """``(name, level, slice, shape)`` for every subband in layout order."""
    out = []
    h, w = basis.ny >> basis.levels, basis.nx >> basis.levels
    pos = h * w
    out.append(("LL", basis.levels, slice(0, pos), (h, w)))
    for level in range(basis.levels, 0, -1):
        h, w = basis.ny >> level, basis.nx >> level
        for name in ("LH", "HL", "HH"):
            out.append((name, level, slice(pos, pos + h * w), (h, w)))
            pos += h * w
    return out


def wavelet_analyze(x, basis: WaveletBasis) -> np.ndarray:
    """Coefficients ``theta = phi^T x``."""
    a = _check(x, basis).reshape(basis.ny, basis.nx)
    details = []
    for _ in range(basis.levels):
        lo = (a[:, 0::2] + a[:, 1::2]) * _SQRT_HALF
        hi = (a[:, 0::2] - a[:, 1::2]) * _SQRT_HALF
        ll = (lo[0::2] + lo[1::2]) * _SQRT_HALF
        lh = (lo[0::2] - lo[1::2]) * _SQRT_HALF
        hl = (hi[0::2] + hi[1::2]) * _SQRT_HALF
        hh = (hi[0::2] - hi[1::2]) * _SQRT_HALF
        details.append((lh, hl, hh))
        a = ll
    parts = [a.ravel()]
    for lh, hl, hh in reversed(details):
        parts += [lh.ravel(), hl.ravel(), hh.ravel()]
    return np.concatenate(parts)


def wavelet_synthesize(theta, basis: WaveletBasis) -> np.ndarray:
    """Image vector ``x = phi theta``."""
    theta = _check(theta, basis)
    bands = subband_slices(basis)
    name, _, sl, shape = bands[0]
    a = theta[sl].reshape(shape)
    for k in range(basis.levels):
        lh, hl, hh = (theta[s].reshape(shp) for _, _, s, shp in bands[1 + 3 * k:4 + 3 * k])
        h, w = a.shape
        lo = np.empty((2 * h, w))
        hi = np.empty((2 * h, w))
        lo[0::2] = (a + lh) * _SQRT_HALF
        lo[1::2] = (a - lh) * _SQRT_HALF
        hi[0::2] = (hl + hh) * _SQRT_HALF
        hi[1::2] = (hl - hh) * _SQRT_HALF
        a = np.empty((2 * h, 2 * w))
        a[:, 0::2] = (lo + hi) * _SQRT_HALF
        a[:, 1::2] = (lo - hi) * _SQRT_HALF
    return a.ravel()


class CsOperator:
    """Matrix-free ``A theta = K phi theta`` and its adjoint ``phi^T K^T r``."""

    def __init__(self, model, basis: WaveletBasis):
        if model.cols != basis.size:
            raise InvalidArgumentError(
                f"model has {model.cols} columns but basis spans {basis.size} pixels")
        self.model = model
        self.basis = basis

    @property
    def shape(self) -> tuple[int, int]:
        return (self.model.rows, self.basis.size)

    def apply(self, theta) -> np.ndarray:
        return self.model.forward(wavelet_synthesize(theta, self.basis))

    def apply_adjoint(self, r) -> np.ndarray:
        return wavelet_analyze(self.model.adjoint(r), self.basis)
