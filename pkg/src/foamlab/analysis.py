"""Geometric post-processing of label fields.

Interfaces are located with sub-cell accuracy from the zero crossing of
``Phi_a - Phi_b`` between neighbouring cell centres, where ``Phi`` are the
phase indicators smoothed with a narrow Gaussian (width of order one cell,
so curved interfaces are not shifted noticeably).
"""

from __future__ import annotations

import itertools
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

from .errors import ConfigurationError, ParameterError
from .field import Kernel, LabelField, convolve, indicators

DEFAULT_SMOOTHING = 1.0  # analysis kernel tau = (SMOOTHING * h)**2


class DisconnectedPhaseWarning(UserWarning):
    pass


@dataclass
class CircleFit:
    center: np.ndarray | None  # None for a straight line
    radius: float  # inf for a line
    residual: float  # RMS distance of the chain points from the fitted curve
    direction: np.ndarray | None = None  # unit direction for lines

    @property
    def is_line(self) -> bool:
        return self.center is None

    @property
    def curvature(self) -> float:
        return 0.0 if self.is_line else 1.0 / self.radius


@dataclass
class Chain:
    pair: tuple[int, int]
    points: np.ndarray
    closed: bool
    fit: CircleFit | None = None

    @property
    def length(self) -> float:
        pts = self.points
        if len(pts) < 2:
            return 0.0
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        if self.closed:
            seg += np.linalg.norm(pts[0] - pts[-1])
        return float(seg)

    def chord_deviation(self) -> float:
        """Largest distance of a chain point from the segment joining its ends."""
        a, b = self.points[0], self.points[-1]
        t = b - a
        n = np.linalg.norm(t)
        if n == 0:
            return float(np.linalg.norm(self.points - a, axis=1).max())
        normal = np.array([-t[1], t[0]]) / n
        return float(np.abs((self.points - a) @ normal).max())


@dataclass
class InterfaceSet:
    labels: LabelField
    chains: dict[tuple[int, int], list[Chain]]
    junction_corners: np.ndarray  # (k, 2) corner indices where >= 3 labels meet
    smoothing: float = DEFAULT_SMOOTHING

    def all_chains(self):
        for pair in sorted(self.chains):
            yield from self.chains[pair]

    def pair_length(self, i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        return sum(c.length for c in self.chains.get(key, []))


@dataclass
class Junction:
    point: np.ndarray
    phases: tuple[int, ...]
    angles: list[float]  # degrees, cyclic order
    sectors: list[int | None]  # phase filling each angle, when identifiable
    flagged: bool = False


@dataclass
class JunctionReport:
    junctions: list[Junction]
    window: int
    smoothing: float

    @property
    def triple(self) -> list[Junction]:
        return [j for j in self.junctions if len(j.angles) == 3 and not j.flagged]

    def all_angles(self) -> np.ndarray:
        return np.array([a for j in self.triple for a in j.angles])


def smoothed_indicators(labels: LabelField, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    h = min(labels.geom.spacing)
    kern = Kernel(labels.geom, (smoothing * h) ** 2)
    return convolve(kern, indicators(labels))


# -- circle fitting


def fit_circle(points: np.ndarray, line_sagitta: float | None = None) -> CircleFit:
    """Least-squares circle, or a line when the arc is indistinguishable from one.

    ``line_sagitta`` is the largest arc height (over the chain's extent) still
    reported as a straight line.
    """
    pts = np.asarray(points, dtype=float)
    centroid = pts.mean(axis=0)
    q = pts - centroid
    _, _, vt = np.linalg.svd(q, full_matrices=False)
    direction = vt[0]
    normal = np.array([-direction[1], direction[0]])
    line_res = float(np.sqrt(np.mean((q @ normal) ** 2)))
    span = float(np.ptp(q @ direction)) if len(pts) > 1 else 0.0
    line = CircleFit(None, np.inf, line_res, direction)
    if len(pts) < 3:
        return line
    A = np.column_stack([pts, np.ones(len(pts))])
    rhs = -(pts**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    c0 = -0.5 * sol[:2]
    r2 = c0 @ c0 - sol[2]
    if not np.isfinite(r2) or r2 <= 0:
        return line

    def resid(p):
        return np.linalg.norm(pts - p[:2], axis=1) - p[2]

    opt = optimize.least_squares(resid, np.r_[c0, np.sqrt(r2)], method="lm")
    center, radius = opt.x[:2], abs(float(opt.x[2]))
    circ_res = float(np.sqrt(np.mean(resid(np.r_[center, radius]) ** 2)))
    sagitta = span**2 / (8 * radius) if radius > 0 else np.inf
    if line_sagitta is not None and sagitta < line_sagitta:
        return line
    if circ_res >= line_res:
        return line
    return CircleFit(center, radius, circ_res)


# -- 2D extraction


def _faces(labels: np.ndarray):
    """Yield (axis, index array of lower cells) for faces between different labels."""
    for axis in (0, 1):
        a = labels
        b = np.roll(labels, -1, axis=axis)
        diff = a != b
        # drop the periodic wrap face
        sl = [slice(None)] * 2
        sl[axis] = -1
        diff[tuple(sl)] = False
        yield axis, np.argwhere(diff)


def extract_interfaces_2d(labels: LabelField, smoothing: float = DEFAULT_SMOOTHING, line_sagitta: float | None = None) -> InterfaceSet:
    """Polyline chains along every interface of a 2D label field."""
    geom = labels.geom
    if geom.ndim != 2:
        raise ConfigurationError("extract_interfaces_2d needs a 2D field")
    lab = labels.labels
    phi = smoothed_indicators(labels, smoothing)
    h = np.asarray(geom.spacing)
    origin = np.asarray(geom.origin)
    if line_sagitta is None:
        line_sagitta = 0.25 * float(h.min())

    face_pair = []
    face_point = []
    face_corners = []
    for axis, cells in _faces(lab):
        other = cells.copy()
        other[:, axis] += 1
        la = lab[cells[:, 0], cells[:, 1]]
        lb = lab[other[:, 0], other[:, 1]]
        d1 = phi[la - 1, cells[:, 0], cells[:, 1]] - phi[lb - 1, cells[:, 0], cells[:, 1]]
        d2 = phi[la - 1, other[:, 0], other[:, 1]] - phi[lb - 1, other[:, 0], other[:, 1]]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d1 - d2 > 0, d1 / (d1 - d2), 0.5)
        t = np.clip(np.where(np.isfinite(t), t, 0.5), 0.0, 1.0)
        pos = origin + h * (cells + t[:, None] * (other - cells))
        # corner (i, j) sits at the lower-left of cell (i, j)
        c1 = other.copy()
        c2 = other.copy()
        perp = 1 - axis
        c2[:, perp] += 1
        for k in range(len(cells)):
            pair = (int(min(la[k], lb[k])), int(max(la[k], lb[k])))
            face_pair.append(pair)
            face_point.append(pos[k])
            face_corners.append((tuple(c1[k]), tuple(c2[k]), tuple(cells[k]), axis))

    # corners touching >= 3 labels
    padded = np.pad(lab, 1, mode="edge")
    quad = np.stack([padded[:-1, :-1], padded[:-1, 1:], padded[1:, :-1], padded[1:, 1:]])
    srt = np.sort(quad, axis=0)
    distinct = 1 + (np.diff(srt, axis=0) != 0).sum(axis=0)
    junction_corners = np.argwhere(distinct >= 3)

    by_corner: dict[tuple, dict[tuple, list[int]]] = defaultdict(lambda: defaultdict(list))
    for f, (ca, cb, _, _) in enumerate(face_corners):
        by_corner[ca][face_pair[f]].append(f)
        by_corner[cb][face_pair[f]].append(f)

    adj: dict[int, list[int]] = defaultdict(list)
    for corner, pairs in by_corner.items():
        for pair, faces in pairs.items():
            if len(faces) == 2:
                f, g = faces
                adj[f].append(g)
                adj[g].append(f)
            elif len(faces) == 4:
                # saddle: join the two faces that bound the same cell of the lower label
                _join_saddle(corner, faces, face_corners, lab, pair[0], adj)

    chains: dict[tuple[int, int], list[Chain]] = defaultdict(list)
    seen = np.zeros(len(face_pair), dtype=bool)
    order = sorted(range(len(face_pair)), key=lambda f: (len(adj[f]) != 1, f))
    for start in order:
        if seen[start]:
            continue
        path = [start]
        seen[start] = True
        prev, cur = -1, start
        closed = False
        while True:
            nxt = [g for g in adj[cur] if g != prev]
            if not nxt:
                break
            g = nxt[0]
            if g == start:
                closed = True
                break
            if seen[g]:
                break
            path.append(g)
            seen[g] = True
            prev, cur = cur, g
        pts = np.array([face_point[f] for f in path])
        pair = face_pair[start]
        chain = Chain(pair, pts, closed and len(path) > 2)
        chain.fit = fit_circle(pts, line_sagitta)
        chains[pair].append(chain)
    return InterfaceSet(labels, dict(chains), junction_corners, smoothing)


def _join_saddle(corner, faces, face_corners, lab, low, adj):
    ci, cj = corner
    for dc in ((-1, -1), (-1, 0), (0, -1), (0, 0)):
        cell = (ci + dc[0], cj + dc[1])
        if not (0 <= cell[0] < lab.shape[0] and 0 <= cell[1] < lab.shape[1]):
            continue
        if lab[cell] != low:
            continue
        own = []
        for f in faces:
            lower, axis = face_corners[f][2], face_corners[f][3]
            upper = list(lower)
            upper[axis] += 1
            if tuple(lower) == cell or tuple(upper) == cell:
                own.append(f)
        if len(own) == 2:
            adj[own[0]].append(own[1])
            adj[own[1]].append(own[0])


# -- junctions


def _cluster_corners(corners: np.ndarray, radius: int = 2):
    if len(corners) == 0:
        return []
    lo = corners.min(axis=0)
    shape = tuple(corners.max(axis=0) - lo + 1)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple((corners - lo).T)] = True
    grown = ndimage.binary_dilation(mask, iterations=radius)
    lab, n = ndimage.label(grown, structure=np.ones((3, 3)))
    ids = lab[tuple((corners - lo).T)]
    return [corners[ids == k] for k in range(1, n + 1)]


def _tangent(points: np.ndarray, window: int, fit: CircleFit | None) -> np.ndarray:
    """Unit tangent at ``points[0]`` pointing along the chain.

    A local quadratic ``y = a x + b x^2 + c`` is fitted over the window; when
    the whole chain has a circle fit its curvature fixes ``b``.
    """
    w = min(window, len(points))
    win = points[:w]
    p0 = win[0]
    if w < 2:
        return np.array([np.nan, np.nan])
    d0 = win[-1] - p0
    d0 = d0 / np.linalg.norm(d0)
    n0 = np.array([-d0[1], d0[0]])
    x = (win - p0) @ d0
    y = (win - p0) @ n0
    if fit is not None and fit.is_line:
        t = fit.direction if fit.direction @ d0 >= 0 else -fit.direction
        return t / np.linalg.norm(t)
    if fit is not None and not fit.is_line:
        side = np.sign((fit.center - p0) @ n0)
        b = side / (2 * fit.radius)
        A = np.column_stack([x, np.ones_like(x)])
        (a, _), *_ = np.linalg.lstsq(A, y - b * x**2, rcond=None)
    elif w >= 4:
        A = np.column_stack([x, x**2, np.ones_like(x)])
        (a, _, _), *_ = np.linalg.lstsq(A, y, rcond=None)
    else:
        a = 0.0
    t = d0 + a * n0
    return t / np.linalg.norm(t)


def _curve_distance(fit: CircleFit, anchor: np.ndarray, p: np.ndarray) -> float:
    if fit.is_line:
        normal = np.array([-fit.direction[1], fit.direction[0]])
        return float((p - anchor) @ normal)
    return float(np.linalg.norm(p - fit.center) - fit.radius)


def _curve_tangent(fit: CircleFit, anchor: np.ndarray, p: np.ndarray, ahead: np.ndarray) -> np.ndarray:
    """Unit tangent of the fitted curve at the projection of ``p``, oriented toward ``ahead``."""
    if fit.is_line:
        t = fit.direction.copy()
        q = p
    else:
        r = p - fit.center
        r = r / np.linalg.norm(r)
        q = fit.center + fit.radius * r
        t = np.array([-r[1], r[0]])
    if t @ (ahead - q) < 0:
        t = -t
    return t


def junction_angles_2d(
    interfaces: InterfaceSet,
    window: int = 8,
    method: str = "fit",
    reach: float = 3.0,
    min_fit_points: int = 10,
) -> JunctionReport:
    """Angles between interface tangents at every point where >= 3 phases meet.

    ``method="fit"`` intersects the curves fitted to whole chains (circle or
    line) and takes their tangents at the intersection; ``window`` then only
    sets how far along the chain the orientation is read. ``method="window"``
    fits a local quadratic to the ``window`` points nearest the junction.
    ``reach`` (in cells) is how close a chain end must come to a junction to
    count as incident.
    """
    if window < 2:
        raise ParameterError("tangent window needs at least two points")
    if method not in ("fit", "window"):
        raise ParameterError(f"unknown tangent method {method!r}")
    geom = interfaces.labels.geom
    lab = interfaces.labels.labels
    h = np.asarray(geom.spacing)
    corner_origin = np.asarray(geom.origin) - h / 2
    junctions = []
    ends = []
    for chain in interfaces.all_chains():
        if chain.closed or len(chain.points) < 2:
            continue
        ends.append((chain, 0))
        ends.append((chain, -1))
    for cluster in _cluster_corners(interfaces.junction_corners):
        point = corner_origin + h * cluster.mean(axis=0)
        phases = set()
        for ci, cj in cluster:
            for di in (-1, 0):
                for dj in (-1, 0):
                    i, j = ci + di, cj + dj
                    if 0 <= i < lab.shape[0] and 0 <= j < lab.shape[1]:
                        phases.add(int(lab[i, j]))
        # one incident chain end per phase pair: the longest chain
        incident: dict[tuple, tuple[Chain, np.ndarray]] = {}
        for chain, end in ends:
            pts = chain.points if end == 0 else chain.points[::-1]
            if np.linalg.norm(pts[0] - point) > reach * h.max():
                continue
            prev = incident.get(chain.pair)
            if prev is None or len(pts) > len(prev[1]):
                incident[chain.pair] = (chain, pts)
        if len(incident) < 3:
            continue
        pairs = sorted(incident)
        usable = all(
            len(incident[p][1]) >= min_fit_points and incident[p][0].fit is not None for p in pairs
        )
        if method == "fit" and usable:
            anchors = {p: incident[p][1].mean(axis=0) for p in pairs}

            def resid(z):
                return [_curve_distance(incident[p][0].fit, anchors[p], z) for p in pairs]

            z = optimize.least_squares(resid, point).x
            if np.linalg.norm(z - point) > reach * h.max():
                z = point
            tangents = [
                _curve_tangent(incident[p][0].fit, anchors[p], z, incident[p][1][min(window, len(incident[p][1]) - 1)])
                for p in pairs
            ]
            point = z
        else:
            tangents = []
            for p in pairs:
                chain, pts = incident[p]
                fit = chain.fit if len(chain.points) >= min_fit_points else None
                tangents.append(_tangent(pts, window, fit))
        keep = [k for k, t in enumerate(tangents) if np.all(np.isfinite(t))]
        tangents = [tangents[k] for k in keep]
        pairs = [pairs[k] for k in keep]
        if len(tangents) < 3:
            continue
        theta = np.array([np.arctan2(t[1], t[0]) for t in tangents])
        order = np.argsort(theta)
        theta = theta[order]
        pairs = [pairs[k] for k in order]
        gaps = np.degrees(np.diff(np.r_[theta, theta[0] + 2 * np.pi]))
        sectors = []
        for k in range(len(pairs)):
            common = set(pairs[k]) & set(pairs[(k + 1) % len(pairs)])
            sectors.append(common.pop() if len(common) == 1 else None)
        flagged = len(phases) > 3 or len(tangents) > 3
        junctions.append(Junction(point, tuple(sorted(phases)), gaps.tolist(), sectors, flagged))
    return JunctionReport(junctions, window, interfaces.smoothing)


# -- measurements


def geometric_perimeter(labels: LabelField, interfaces: InterfaceSet | None = None):
    """Per-pair chain lengths and their total (each interface counted once)."""
    if labels.geom.ndim != 2:
        raise ConfigurationError("geometric_perimeter is implemented for 2D fields")
    if interfaces is None:
        interfaces = extract_interfaces_2d(labels)
    per_pair = {pair: sum(c.length for c in chains) for pair, chains in interfaces.chains.items()}
    return per_pair, float(sum(per_pair.values()))


def geometric_area(labels: LabelField, i: int) -> float:
    if not 1 <= i <= labels.n_phases:
        raise ParameterError(f"phase index {i} outside 1..{labels.n_phases}")
    return int(np.count_nonzero(labels.labels == i)) * labels.geom.cell_volume


def phase_perimeter(labels: LabelField, i: int, interfaces: InterfaceSet | None = None) -> float:
    if interfaces is None:
        interfaces = extract_interfaces_2d(labels)
    return sum(c.length for pair, chains in interfaces.chains.items() if i in pair for c in chains)


def is_connected(labels: LabelField, i: int) -> bool:
    _, n = ndimage.label(labels.labels == i)
    return n == 1


def isoperimetric_ratio(labels: LabelField, i: int, interfaces: InterfaceSet | None = None) -> float:
    """Perimeter**2 / area of phase ``i``; 4*pi for a disc."""
    if labels.geom.ndim != 2:
        raise ConfigurationError("isoperimetric_ratio is defined for 2D fields")
    if not is_connected(labels, i):
        warnings.warn(f"phase {i} is not connected", DisconnectedPhaseWarning, stacklevel=2)
    area = geometric_area(labels, i)
    if area == 0:
        raise ParameterError(f"phase {i} is empty")
    return phase_perimeter(labels, i, interfaces) ** 2 / area


def interior_bubble_count(labels: LabelField) -> int:
    """Bubbles with no cell sharing a face with the complement."""
    comp = labels.labels == labels.complement
    near = ndimage.binary_dilation(comp, structure=ndimage.generate_binary_structure(labels.geom.ndim, 1))
    touching = set(np.unique(labels.labels[near & ~comp]).tolist())
    return sum(1 for i in range(1, labels.n_phases) if i not in touching and np.any(labels.labels == i))


def bending_side(interfaces: InterfaceSet, i: int, j: int) -> int | None:
    """Phase on the concave side (centre of curvature) of the (i, j) interface.

    ``None`` when the interface is straight or absent.
    """
    key = (min(i, j), max(i, j))
    chains = interfaces.chains.get(key, [])
    if not chains:
        return None
    chain = max(chains, key=lambda c: len(c.points))
    if chain.fit is None or chain.fit.is_line:
        return None
    mid = chain.points[len(chain.points) // 2]
    lab = interfaces.labels
    centers = lab.geom.centers()
    toward = chain.fit.center - mid
    ci = centers[lab.labels == i].mean(axis=0)
    cj = centers[lab.labels == j].mean(axis=0)
    return i if toward @ (ci - mid) - toward @ (cj - mid) > 0 else j


# -- 3D Plateau borders


@dataclass
class AngleStats:
    count: int
    mean: float = float("nan")
    std: float = float("nan")
    min: float = float("nan")
    max: float = float("nan")
    values: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @classmethod
    def of(cls, values) -> "AngleStats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(0)
        return cls(int(v.size), float(v.mean()), float(v.std()), float(v.min()), float(v.max()), v)


@dataclass
class PlateauReport:
    dihedral: AngleStats
    vertex_tangent: AngleStats
    n_triple_samples: int
    n_vertices: int
    flagged: bool
    params: dict


def _neighbourhood_labels(lab: np.ndarray, radius: int = 1):
    """Per-cell sorted distinct labels in the (2r+1)^d box, as count + min/max ids."""
    d = lab.ndim
    offsets = list(itertools.product(range(-radius, radius + 1), repeat=d))
    stack = []
    pad = np.pad(lab, radius, mode="edge")
    for off in offsets:
        sl = tuple(slice(radius + o, radius + o + n) for o, n in zip(off, lab.shape))
        stack.append(pad[sl])
    stack = np.sort(np.stack(stack), axis=0)
    distinct = 1 + (np.diff(stack, axis=0) != 0).sum(axis=0)
    return stack, distinct



def _pair_faces(lab: np.ndarray, clean: np.ndarray, phi: np.ndarray | None = None):
    """Interface points (cell units) and unit crossing directions per phase pair.

    One point per face whose two cells both satisfy ``clean``: the face
    midpoint, or with ``phi`` the zero crossing of the smoothed indicator
    difference between the two cell centres. Directions point from the lower
    to the higher phase id.
    """
    pts = defaultdict(list)
    dirs = defaultdict(list)
    for axis in range(lab.ndim):
        sl = [slice(None)] * lab.ndim
        sl[axis] = slice(0, -1)
        lower = tuple(sl)
        sl[axis] = slice(1, None)
        upper = tuple(sl)
        lo, hi = lab[lower], lab[upper]
        sel = (lo != hi) & clean[lower] & clean[upper]
        cells = np.argwhere(sel)
        u, w = lo[sel], hi[sel]
        t = np.full(len(cells), 0.5)
        if phi is not None and len(cells):
            other = cells.copy()
            other[:, axis] += 1
            ci, oi = tuple(cells.T), tuple(other.T)
            d1 = phi[(u - 1,) + ci] - phi[(w - 1,) + ci]
            d2 = phi[(u - 1,) + oi] - phi[(w - 1,) + oi]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(d1 - d2 > 0, d1 / (d1 - d2), 0.5)
            t = np.clip(np.where(np.isfinite(t), t, 0.5), 0.0, 1.0)
        pos = cells.astype(float)
        pos[:, axis] += t
        step = np.zeros((len(cells), lab.ndim))
        step[:, axis] = np.where(u < w, 1.0, -1.0)
        key_lo, key_hi = np.minimum(u, w), np.maximum(u, w)
        for pair in set(zip(key_lo.tolist(), key_hi.tolist())):
            m = (key_lo == pair[0]) & (key_hi == pair[1])
            pts[pair].append(pos[m])
            dirs[pair].append(step[m])
    return {k: (np.concatenate(pts[k]), np.concatenate(dirs[k])) for k in pts}


def _sheet_normal(points: np.ndarray, crossings: np.ndarray, at: np.ndarray, fit: str = "sphere", weights: np.ndarray | None = None) -> np.ndarray:
    """Unit normal at ``at`` of a plane or algebraic sphere fitted to ``points``.

    The sphere ``a|x|^2 + b.x + c = 0`` degenerates gracefully to a plane.
    The result is oriented along the mean crossing direction.
    """
    w = np.ones(len(points)) if weights is None else weights
    centre = (w[:, None] * points).sum(axis=0) / w.sum()
    q = points - centre
    scale = max(float(np.sqrt((w * (q**2).sum(axis=1)).sum() / w.sum())), 1e-300)
    q = q / scale
    sw = np.sqrt(w)[:, None]
    if fit == "sphere" and len(points) >= 8:
        A = np.column_stack([(q**2).sum(axis=1), q, np.ones(len(q))])
        _, _, vt = np.linalg.svd(sw * A, full_matrices=False)
        a, b = vt[-1][0], vt[-1][1:-1]
        n = 2 * a * (at - centre) / scale + b
    else:
        _, _, vt = np.linalg.svd(sw * q, full_matrices=False)
        n = vt[-1]
    n = n / np.linalg.norm(n)
    return n if n @ crossings.sum(axis=0) >= 0 else -n


def _touches_edge(mask: np.ndarray) -> bool:
    for axis in range(mask.ndim):
        if mask.take(0, axis=axis).any() or mask.take(-1, axis=axis).any():
            return True
    return False


def _centre_cluster(labels: LabelField) -> LabelField:
    """Periodic shift that moves a cluster wrapped across the array edge to the middle.

    Fields whose cluster already stays clear of the edge, or cannot be made
    to, are returned unchanged.
    """
    bubble = labels.labels != labels.complement
    if not bubble.any() or not _touches_edge(bubble):
        return labels
    shifts = []
    for axis, n in enumerate(labels.geom.dims):
        idx = np.nonzero(bubble)[axis]
        ang = np.angle(np.mean(np.exp(2j * np.pi * idx / n)))
        shifts.append(int(round(n / 2 - ang * n / (2 * np.pi))) % n)
    axes = tuple(range(len(shifts)))
    if _touches_edge(np.roll(bubble, shifts, axis=axes)):
        return labels
    return LabelField(labels.geom, np.roll(labels.labels, shifts, axis=axes), labels.n_phases)


def plateau_border_angles_3d(
    labels: LabelField,
    normal_radius: float = 12.0,
    fit: str = "sphere",
    smoothing: float = 0.0,
    line_gap: float = 1.0,
    vertex_shell: tuple[float, float] = (4.0, 12.0),
    min_samples: int = 10,
    max_samples: int = 4000,
) -> PlateauReport:
    """Dihedral angles along triple lines and border-tangent angles at 4-phase vertices.

    A cluster wrapped across the periodic edge is first shifted to mid-array;
    samples closer than ``normal_radius`` to the array edge are skipped.
    Lengths (``normal_radius``, ``vertex_shell``, ``line_gap``) are in cells. The normal of
    each incident interface comes from a sphere (``fit="sphere"``) or plane
    (``fit="plane"``) fitted to its cell-face midpoints within
    ``normal_radius`` of the triple-line sample, evaluated at the sample.
    Faces within ``line_gap`` of a cell seeing three phases are left out:
    the staircase there belongs to the line rather than to either sheet.
    With ``smoothing > 0`` sheet points are zero crossings of smoothed
    indicator differences instead of face midpoints.
    """
    geom = labels.geom
    if geom.ndim != 3:
        raise ConfigurationError("plateau_border_angles_3d needs a 3D field")
    if fit not in ("sphere", "plane"):
        raise ParameterError(f"unknown sheet fit {fit!r}")
    labels = _centre_cluster(labels)
    lab = labels.labels
    h = np.asarray(geom.spacing)
    stack, distinct = _neighbourhood_labels(lab, 1)
    interior = np.zeros(lab.shape, dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = True
    triple_mask = (distinct == 3) & interior
    quad_mask = (distinct >= 4) & interior

    # 4-phase vertices
    vlab, nv = ndimage.label(ndimage.binary_dilation(quad_mask, iterations=1), structure=np.ones((3, 3, 3)))
    vertices = []
    for k in range(1, nv + 1):
        cells = np.argwhere((vlab == k) & quad_mask)
        if len(cells) == 0:
            continue
        phases = sorted(set(np.unique(stack[:, cells[:, 0], cells[:, 1], cells[:, 2]]).tolist()))
        vertices.append((cells.mean(axis=0), phases))

    triple_cells = np.argwhere(triple_mask)
    # the three phase ids of every triple sample
    ids = stack[:, triple_cells[:, 0], triple_cells[:, 1], triple_cells[:, 2]].T
    trip = np.array([np.unique(row) for row in ids]) if len(ids) else np.empty((0, 3), dtype=int)

    near_vertex = np.zeros(len(triple_cells), dtype=bool)
    for v, _ in vertices:
        near_vertex |= np.linalg.norm(triple_cells - v, axis=1) < vertex_shell[0]

    # a fit ball cut by the array edge is lopsided
    margin = np.minimum(triple_cells, np.asarray(lab.shape) - 1 - triple_cells).min(axis=1) if len(triple_cells) else np.empty(0)
    usable = margin >= normal_radius
    faces: dict | None = None
    trees: dict = {}

    def sheet_normals(s):
        """Normals n_ab, n_bc, n_ca at triple sample ``s``; n_uw points from u into w."""
        nonlocal faces
        if faces is None:
            clean = ndimage.distance_transform_edt(distinct < 3) > line_gap
            phi = smoothed_indicators(labels, smoothing) if smoothing > 0 else None
            faces = _pair_faces(lab, clean, phi)
        a, b, c = (int(t) for t in trip[s])
        p = triple_cells[s]
        out = []
        for u, w in ((a, b), (b, c), (c, a)):
            key = (min(u, w), max(u, w))
            if key not in faces:
                return None
            if key not in trees:
                trees[key] = cKDTree(faces[key][0])
            mids, dirs = faces[key]
            near = trees[key].query_ball_point(p, normal_radius)
            if len(near) < 3:
                return None
            n = _sheet_normal(mids[near] * h, dirs[near] * h, p * h, fit)
            out.append(n if u == key[0] else -n)
        return out

    dihedral = []
    sample_idx = np.flatnonzero(~near_vertex & usable)
    if len(sample_idx) > max_samples:
        sample_idx = sample_idx[np.linspace(0, len(sample_idx) - 1, max_samples).astype(int)]
    for s in sample_idx:
        normals = sheet_normals(s)
        if normals is None:
            continue
        n_ab, n_bc, n_ca = normals
        # the outward normals of phase a are n_ab and -n_ca
        for n1, n2 in ((n_ab, -n_ca), (n_bc, -n_ab), (n_ca, -n_bc)):
            cosang = np.clip(n1 @ n2, -1.0, 1.0)
            dihedral.append(180.0 - np.degrees(np.arccos(cosang)))

    tangent_angles = []
    for v, phases in vertices:
        if len(phases) != 4:
            continue
        dirs = []
        for triple in itertools.combinations(phases, 3):
            sel = np.all(trip == np.array(triple), axis=1) if len(trip) else np.zeros(0, bool)
            idx = np.flatnonzero(sel)
            dist = np.linalg.norm(triple_cells[idx] - v, axis=1)
            idx = idx[(dist >= vertex_shell[0]) & (dist <= vertex_shell[1])]
            if len(idx) == 0:
                continue
            away = ((triple_cells[idx] - v) * h).mean(axis=0)
            # border tangent from the two sheets meeting along it
            tangents = []
            for s in idx[usable[idx]]:
                normals = sheet_normals(s)
                if normals is None:
                    continue
                t = np.cross(normals[0], normals[1])
                norm = np.linalg.norm(t)
                if norm > 1e-6:
                    t = t / norm
                    tangents.append(t if t @ away >= 0 else -t)
            if tangents:
                axis = np.mean(tangents, axis=0)
            else:
                # no room for sheet fits: principal axis of the border samples
                vecs = (triple_cells[idx] - v) * h
                axis = np.linalg.svd(vecs - vecs.mean(axis=0), full_matrices=False)[2][0] if len(idx) > 1 else away
                axis = axis if axis @ away >= 0 else -axis
            dirs.append(axis / np.linalg.norm(axis))
        if len(dirs) == 4:
            for d1, d2 in itertools.combinations(dirs, 2):
                tangent_angles.append(np.degrees(np.arccos(np.clip(d1 @ d2, -1.0, 1.0))))

    flagged = len(dihedral) < min_samples
    return PlateauReport(
        dihedral=AngleStats.of(dihedral),
        vertex_tangent=AngleStats.of(tangent_angles),
        n_triple_samples=int(len(triple_cells)),
        n_vertices=len(vertices),
        flagged=flagged,
        params={
            "normal_radius": normal_radius,
            "fit": fit,
            "smoothing": smoothing,
            "line_gap": line_gap,
            "vertex_shell": list(vertex_shell),
            "min_samples": min_samples,
        },
    )


def face_adjacency(labels: LabelField) -> dict[int, set[int]]:
    """Neighbouring phases of every phase (face contact)."""
    lab = labels.labels
    out: dict[int, set[int]] = defaultdict(set)
    for axis in range(lab.ndim):
        a = lab
        b = np.roll(lab, -1, axis=axis)
        sl = [slice(None)] * lab.ndim
        sl[axis] = slice(0, -1)
        a, b = a[tuple(sl)], b[tuple(sl)]
        diff = a != b
        for u, w in set(zip(a[diff].tolist(), b[diff].tolist())):
            out[u].add(w)
            out[w].add(u)
    return dict(out)
