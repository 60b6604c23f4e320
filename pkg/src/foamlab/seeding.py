"""Random volume-feasible initial foams and bubble insertion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .auction import AuctionParams, VolumeTargets, assign
from .errors import ConfigurationError, InsertionError, ParameterError
from .field import GridGeom, Kernel, LabelField, SoftField, convolve

RNG_ALGORITHM = "numpy.random.PCG64"
AUTO_BOX_MAX = 0.8
_UNIT_BALL = {2: np.pi, 3: 4.0 * np.pi / 3.0}


@dataclass(frozen=True)
class SeedSpec:
    """Recipe for a random initial foam.

    ``inner_box`` is given as fractional ``(lo, hi)`` bounds per axis, or a
    single float ``f`` for a centred box of relative extent ``f``. The
    default ``"auto"`` centres a cube whose volume equals the total bubble
    volume, so neighbouring Voronoi cells start out in contact.
    """

    n_bubbles: int
    volumes: VolumeTargets
    rng_seed: int = 0
    inner_box: float | tuple | str = "auto"

    def __post_init__(self):
        if self.n_bubbles < 1:
            raise ParameterError("need at least one bubble")
        if self.volumes.n_phases != self.n_bubbles + 1:
            raise ParameterError("volume targets must list every bubble plus the complement")

    def box_bounds(self, geom: GridGeom) -> np.ndarray:
        d = geom.ndim
        box = self.inner_box
        if box == "auto":
            bubble_volume = sum(self.volumes.counts[:-1]) * geom.cell_volume
            side = bubble_volume ** (1.0 / d)
            frac = np.clip(side / np.asarray(geom.lengths), 1e-3, AUTO_BOX_MAX)
            bounds = np.column_stack([0.5 - frac / 2, 0.5 + frac / 2])
        elif np.isscalar(box):
            f = float(box)
            bounds = np.array([[0.5 - f / 2, 0.5 + f / 2]] * d)
        else:
            bounds = np.asarray(box, dtype=float).reshape(d, 2)
        if np.any(bounds[:, 0] <= 0) or np.any(bounds[:, 1] >= 1) or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ParameterError(f"inner box {bounds.tolist()} must lie strictly inside the domain")
        return bounds


def voronoi_partition(geom: GridGeom, spec: SeedSpec) -> LabelField:
    """Voronoi cells of uniform random sites inside the inner box; complement outside."""
    rng = np.random.default_rng(spec.rng_seed)
    bounds = spec.box_bounds(geom)
    lengths = np.asarray(geom.lengths)
    lo = np.asarray(geom.origin) - np.asarray(geom.spacing) / 2 + bounds[:, 0] * lengths
    hi = np.asarray(geom.origin) - np.asarray(geom.spacing) / 2 + bounds[:, 1] * lengths
    sites = rng.uniform(lo, hi, size=(spec.n_bubbles, geom.ndim))
    centers = geom.centers().reshape(-1, geom.ndim)
    inside = np.all((centers >= lo) & (centers < hi), axis=1)
    labels = np.full(geom.n_cells, spec.n_bubbles + 1, dtype=np.int32)
    _, nearest = cKDTree(sites).query(centers[inside])
    labels[inside] = nearest + 1
    return LabelField(geom, labels.reshape(geom.dims), spec.n_bubbles + 1)


def random_voronoi_init(geom: GridGeom, spec: SeedSpec, kernel: Kernel, auction: AuctionParams = AuctionParams()) -> LabelField:
    """Random initial partition meeting ``spec.volumes`` exactly.

    The Voronoi indicators are weighted by the inverse of their cell counts,
    diffused once and handed to the auction, which enforces the targets.
    """
    spec.volumes.check(geom.n_cells)
    vor = voronoi_partition(geom, spec)
    soft = SoftField.from_labels(vor)
    sizes = vor.counts().astype(float)
    if np.any(sizes == 0):
        raise ParameterError("a Voronoi cell contains no grid cells; refine the grid or enlarge the box")
    weighted = soft.values / sizes.reshape((-1,) + (1,) * geom.ndim)
    scores = convolve(kernel, weighted)
    # rescale so the largest score is 1; the optimal assignment is unchanged
    scores /= scores.max()
    table = np.ascontiguousarray(scores.reshape(soft.n_phases, -1).T)
    result = assign(table, spec.volumes, auction)
    labels = (result.labels + 1).astype(np.int32).reshape(geom.dims)
    return LabelField(geom, labels, soft.n_phases)


def cluster_boundary_cells(labels: LabelField) -> np.ndarray:
    """Mask of complement cells sharing a face with some bubble cell."""
    bubble = labels.labels != labels.complement
    grown = ndimage.binary_dilation(bubble, structure=ndimage.generate_binary_structure(labels.geom.ndim, 1))
    return grown & ~bubble


def _periodic_distance2(geom: GridGeom, point: Sequence[float]) -> np.ndarray:
    d2 = np.zeros(geom.dims)
    for axis, (ax, L) in enumerate(zip(geom.axes(), geom.lengths)):
        delta = np.abs(ax - point[axis])
        delta = np.minimum(delta, L - delta)
        shape = [1] * geom.ndim
        shape[axis] = -1
        d2 = d2 + (delta**2).reshape(shape)
    return d2


def insert_bubble(labels: LabelField, position: Sequence[float], v: int, where: str = "explicit") -> LabelField:
    """Carve a new bubble of exactly ``v`` cells out of the complement.

    With ``where="boundary"`` the insertion point is first moved to the
    nearest complement cell adjacent to the cluster. The new bubble takes
    phase id ``n_phases`` and the complement moves to ``n_phases + 1``.
    """
    v = int(v)
    if v < 1:
        raise ParameterError("inserted bubble needs at least one cell")
    geom = labels.geom
    if len(position) != geom.ndim:
        raise ConfigurationError("insertion position has wrong dimension")
    comp = labels.labels == labels.complement
    point = np.asarray(position, dtype=float)
    if where == "boundary":
        rim = cluster_boundary_cells(labels)
        if not rim.any():
            raise InsertionError("no cluster boundary to insert at")
        d2 = _periodic_distance2(geom, point)
        flat = np.where(rim.ravel(), d2.ravel(), np.inf)
        point = geom.centers().reshape(-1, geom.ndim)[int(np.argmin(flat))]
    elif where != "explicit":
        raise ParameterError(f"unknown insertion mode {where!r}")
    d2 = _periodic_distance2(geom, point).ravel()
    candidates = np.flatnonzero(comp.ravel())
    if candidates.size < v:
        raise InsertionError(f"only {candidates.size} complement cells available, need {v}")
    # stable sort: equal distances fall back to cell index
    order = candidates[np.argsort(d2[candidates], kind="stable")[:v]]
    ball = (v * geom.cell_volume / _UNIT_BALL[geom.ndim]) ** (1.0 / geom.ndim)
    if np.sqrt(d2[order[-1]]) > 2 * ball + 2 * max(geom.spacing):
        raise InsertionError(
            f"fewer than {v} complement cells near {tuple(point)}; the bubble would be scattered"
        )
    new = labels.labels.copy()
    new[comp] = labels.n_phases + 1
    flat = new.ravel()
    flat[order] = labels.n_phases
    return LabelField(geom, flat.reshape(geom.dims), labels.n_phases + 1)
