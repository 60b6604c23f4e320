"""Grid geometry, phase label fields and periodic Gaussian convolution."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft

from .errors import ConfigurationError, ParameterError


def fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("FOAMLAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GridGeom:
    """Uniform cell-centred Cartesian grid.

    ``dims`` are the cell counts per axis, ``spacing`` the cell widths and
    ``origin`` the coordinate of the centre of cell ``(0, ..., 0)``.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        if len(dims) not in (2, 3):
            raise ConfigurationError(f"grid must be 2D or 3D, got {len(dims)} axes")
        if len(spacing) != len(dims):
            raise ConfigurationError("spacing and dims must have the same length")
        if any(n < 4 for n in dims):
            raise ConfigurationError(f"every grid extent must be >= 4, got {dims}")
        if any(not h > 0 for h in spacing):
            raise ConfigurationError(f"grid spacing must be positive, got {spacing}")
        origin = self.origin
        if origin is None:
            origin = tuple(h / 2 for h in spacing)
        origin = tuple(float(o) for o in origin)
        if len(origin) != len(dims):
            raise ConfigurationError("origin and dims must have the same length")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, dims: Sequence[int], lengths: Sequence[float] | float) -> "GridGeom":
        """Grid covering ``[0, L_k)`` on every axis with ``dims[k]`` cells."""
        dims = tuple(int(n) for n in dims)
        if np.isscalar(lengths):
            lengths = [float(lengths)] * len(dims)
        if len(lengths) != len(dims):
            raise ConfigurationError("lengths and dims must have the same length")
        return cls(dims, tuple(float(L) / n for L, n in zip(lengths, dims)))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.dims, self.spacing))

    @property
    def volume(self) -> float:
        return self.cell_volume * self.n_cells

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for n, h, o in zip(self.dims, self.spacing, self.origin)]

    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``dims + (d,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_of(self, point: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell whose centre is nearest to ``point`` (clamped)."""
        idx = []
        for p, n, h, o in zip(point, self.dims, self.spacing, self.origin):
            idx.append(int(np.clip(np.rint((p - o) / h), 0, n - 1)))
        return tuple(idx)


@dataclass(eq=False)
class LabelField:
    """Hard partition of the grid: one 1-based phase id per cell.

    Phase ``n_phases`` is the complement (the space surrounding the bubbles).
    """

    geom: GridGeom
    labels: np.ndarray
    n_phases: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.geom.dims:
            raise ConfigurationError(
                f"label array shape {labels.shape} does not match grid {self.geom.dims}"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            raise ConfigurationError("labels must be integers")
        self.n_phases = int(self.n_phases)
        if self.n_phases < 1:
            raise ConfigurationError("need at least one phase")
        if labels.size and (labels.min() < 1 or labels.max() > self.n_phases):
            raise ConfigurationError(f"labels must lie in 1..{self.n_phases}")
        self.labels = labels.astype(np.int32, copy=False)

    @property
    def n_bubbles(self) -> int:
        return self.n_phases - 1

    @property
    def complement(self) -> int:
        return self.n_phases

    def counts(self) -> np.ndarray:
        """Integer cell tally per phase, index ``i - 1`` for phase ``i``."""
        return np.bincount(self.labels.ravel() - 1, minlength=self.n_phases)

    def volumes(self) -> np.ndarray:
        return self.counts() * self.geom.cell_volume

    def copy(self) -> "LabelField":
        return LabelField(self.geom, self.labels.copy(), self.n_phases)

    def __eq__(self, other):
        if not isinstance(other, LabelField):
            return NotImplemented
        return (
            self.geom == other.geom
            and self.n_phases == other.n_phases
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(eq=False)
class SoftField:
    """Relaxed partition: per-phase values in [0, 1] summing to one per cell."""

    geom: GridGeom
    values: np.ndarray  # shape (n_phases,) + dims

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape[1:] != self.geom.dims:
            raise ConfigurationError("soft field shape does not match grid")
        if values.min() < -1e-12 or values.max() > 1 + 1e-12:
            raise ParameterError("soft field values must lie in [0, 1]")
        if np.abs(values.sum(axis=0) - 1.0).max() > 1e-12:
            raise ParameterError("soft field values must sum to 1 in every cell")
        self.values = values

    @classmethod
    def from_labels(cls, labels: LabelField) -> "SoftField":
        return cls(labels.geom, indicators(labels))

    @property
    def n_phases(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class Kernel:
    """Heat kernel G_tau on a periodic grid, stored as its spectral multiplier.

    The multiplier is ``exp(-tau |k|^2)`` at the grid's angular frequencies,
    laid out for :func:`scipy.fft.rfftn` over the last ``d`` axes.
    """

    geom: GridGeom
    tau: float
    multiplier: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.tau = float(self.tau)
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        freqs = []
        d = self.geom.ndim
        for axis, (n, h) in enumerate(zip(self.geom.dims, self.geom.spacing)):
            if axis == d - 1:
                k = 2 * np.pi * np.fft.rfftfreq(n, d=h)
            else:
                k = 2 * np.pi * np.fft.fftfreq(n, d=h)
            shape = [1] * d
            shape[axis] = k.size
            freqs.append((k**2).reshape(shape))
        # floor at the smallest normal double so the multiplier stays positive
        self.multiplier = np.maximum(np.exp(-self.tau * sum(freqs)), np.finfo(float).tiny)

    @property
    def width(self) -> float:
        """Diffusion length sqrt(tau)."""
        return float(np.sqrt(self.tau))


def convolve(kernel: Kernel, f: np.ndarray) -> np.ndarray:
    """Periodic convolution ``G_tau * f``.

    ``f`` has shape ``geom.dims`` or ``(m,) + geom.dims``; in the latter case
    each of the ``m`` leading slices is convolved independently.
    """
    f = np.asarray(f, dtype=np.float64)
    dims = kernel.geom.dims
    d = len(dims)
    if f.shape[-d:] != dims or f.ndim not in (d, d + 1):
        raise ConfigurationError(f"field shape {f.shape} does not match kernel grid {dims}")
    axes = tuple(range(f.ndim - d, f.ndim))
    workers = fft_workers()
    spec = scipy.fft.rfftn(f, axes=axes, workers=workers)
    spec *= kernel.multiplier
    return scipy.fft.irfftn(spec, s=dims, axes=axes, workers=workers)


def phase_indicator(labels: LabelField, i: int) -> np.ndarray:
    """1.0 on cells of phase ``i`` and 0.0 elsewhere."""
    if not 1 <= i <= labels.n_phases:
        raise ParameterError(f"phase index {i} outside 1..{labels.n_phases}")
    return (labels.labels == i).astype(np.float64)


def indicators(labels: LabelField) -> np.ndarray:
    """All phase indicators stacked, shape ``(n_phases,) + dims``."""
    out = np.zeros((labels.n_phases,) + labels.geom.dims)
    idx = labels.labels - 1
    np.put_along_axis(out, idx[None], 1.0, axis=0)
    return out
