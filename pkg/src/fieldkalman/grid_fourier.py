"""Uniform grids on R^d and a continuous Fourier transform built on the FFT.

Conventions
-----------
The forward transform approximates ``F(w) = int f(i) exp(-2 pi j w.i) di``
and the inverse ``f(i) = int F(w) exp(2 pi j i.w) dw``. Frequencies are stored
in ascending (``fftshift``) order, so the dual grid of an axis with ``N``
samples at spacing ``h`` starts at ``-(N // 2) / (N h)`` with spacing
``1 / (N h)``.

Gridded values are numpy arrays of shape ``counts + (rows, cols)``; the
trailing two axes hold the per-point matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft


class GridError(ValueError):
    """Raised when grid and value shapes disagree."""


@dataclass(frozen=True)
class GridSpec:
    """Rectangular uniform sampling grid.

    ``source`` is only set on frequency grids: it is the spatial grid the
    frequencies were derived from, which fixes the phase of the transform
    pair and makes ``grid.dual().dual() == grid`` exact.
    """

    lower: tuple[float, ...]
    spacing: tuple[float, ...]
    counts: tuple[int, ...]
    source: GridSpec | None = None

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        spacing = tuple(float(v) for v in np.atleast_1d(self.spacing))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lower) == len(spacing) == len(counts)) or not lower:
            raise GridError("lower, spacing and counts must share one positive length")
        if any(h <= 0 or not np.isfinite(h) for h in spacing):
            raise GridError(f"spacings must be positive, got {spacing}")
        if any(n < 2 for n in counts):
            raise GridError(f"every axis needs at least 2 samples, got {counts}")
        if np.prod(counts, dtype=float) > np.iinfo(np.intp).max:
            raise GridError("grid too large to address")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_extent(cls, lower, upper, spacing) -> "GridSpec":
        """Grid covering ``[lower, upper]`` with both endpoints included.

        ``counts = round((upper - lower) / spacing) + 1`` per axis, so the
        default pixel domain ``[-0.5, 0.5]^2`` at spacing 0.005 has 201 samples
        per axis.
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lower.shape)
        counts = np.rint((upper - lower) / spacing).astype(int) + 1
        return cls(tuple(lower), tuple(spacing), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def is_frequency(self) -> bool:
        return self.source is not None

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.counts)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All grid points as an array of shape ``counts + (dim,)``."""
        return np.stack(self.mesh(), axis=-1)

    def dual(self) -> "GridSpec":
        """Frequency grid of a spatial grid, or the spatial grid of a frequency grid."""
        if self.is_frequency:
            return self.source
        spacing = tuple(1.0 / (n * h) for n, h in zip(self.counts, self.spacing))
        lower = tuple(-(n // 2) * dw for n, dw in zip(self.counts, spacing))
        return GridSpec(lower, spacing, self.counts, source=self)

    def trapezoid_weights(self) -> np.ndarray:
        """Tensor-product trapezoidal weights, shape ``counts``."""
        w = None
        for h, n in zip(self.spacing, self.counts):
            w1 = np.full(n, h)
            w1[0] = w1[-1] = 0.5 * h
            w = w1 if w is None else np.multiply.outer(w, w1)
        return w


@dataclass(frozen=True)
class GriddedFunction:
    """Matrix-valued function sampled on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == self.grid.dim:
            values = values[..., None, None]
        if values.ndim != self.grid.dim + 2 or values.shape[: self.grid.dim] != self.grid.counts:
            raise GridError(
                f"values of shape {values.shape} do not fit grid counts {self.grid.counts}"
            )
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[-2]

    @property
    def cols(self) -> int:
        return self.values.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[-2:]

    @classmethod
    def from_callable(cls, grid: GridSpec, func) -> "GriddedFunction":
        """Evaluate ``func(points)`` where points has shape ``counts + (dim,)``."""
        return cls(grid, func(grid.points()))


def _phase(freq_grid: GridSpec, origin, sign: float) -> np.ndarray:
    ph = None
    for w, x0 in zip(freq_grid.axes(), origin):
        p = np.exp(sign * 2j * np.pi * w * x0)
        ph = p if ph is None else np.multiply.outer(ph, p)
    return ph[..., None, None]


def forward_ct(fn: GriddedFunction) -> GriddedFunction:
    """Continuous Fourier transform of a spatial gridded function."""
    grid = fn.grid
    if grid.is_frequency:
        raise GridError("forward_ct expects a spatial grid")
    axes = tuple(range(grid.dim))
    spec = sfft.fftshift(sfft.fftn(fn.values, axes=axes), axes=axes)
    fgrid = grid.dual()
    spec *= grid.cell_volume * _phase(fgrid, grid.lower, -1.0)
    return GriddedFunction(fgrid, spec)


def inverse_ct(spec: GriddedFunction) -> GriddedFunction:
    """Inverse continuous Fourier transform back onto the originating spatial grid."""
    fgrid = spec.grid
    if not fgrid.is_frequency:
        raise GridError("inverse_ct expects a frequency grid (see GridSpec.dual)")
    axes = tuple(range(fgrid.dim))
    shifted = spec.values * _phase(fgrid, fgrid.source.lower, 1.0)
    vals = sfft.ifftn(sfft.ifftshift(shifted, axes=axes), axes=axes)
    vals *= fgrid.size * fgrid.cell_volume
    return GriddedFunction(fgrid.dual(), vals)


def quadrature(fn: GriddedFunction) -> np.ndarray:
    """Trapezoidal approximation of the integral over the grid domain."""
    w = fn.grid.trapezoid_weights()
    d = fn.grid.dim
    return np.tensordot(w, fn.values, axes=(tuple(range(d)), tuple(range(d))))


def riemann_sum(fn: GriddedFunction) -> np.ndarray:
    """Uniform-weight sum, used for integrals over (periodic) frequency grids."""
    axes = tuple(range(fn.grid.dim))
    return fn.values.sum(axis=axes) * fn.grid.cell_volume
