"""Quasi-stationary experiments: volume ramps, bubble insertion, restart search."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .auction import VolumeTargets
from .engine import SimParams, evolve
from .errors import ConvergenceError, InfeasibleRampError, ParameterError
from .field import GridGeom, Kernel, LabelField
from .seeding import SeedSpec, insert_bubble, random_voronoi_init

logger = logging.getLogger(__name__)

DIRECTIONS = ("up", "down", "up-down")


@dataclass(frozen=True)
class InsertionEvent:
    position: tuple[float, ...]
    v: int
    where: str = "boundary"


@dataclass(frozen=True)
class FlowSchedule:
    """Ramp of one bubble's cell count from ``v_start`` to ``v_end`` in steps of ``dV``.

    After the target reaches ``v_end`` on an upward ramp, each insertion event
    adds a new bubble of ``v`` cells, which then becomes the ramp target and
    grows to ``v_end`` in turn.
    """

    target_phase: int
    dV: int
    v_start: int
    v_end: int
    direction: str = "up"
    insertions: tuple[InsertionEvent, ...] = ()

    def __post_init__(self):
        if self.dV < 1:
            raise ParameterError("dV must be at least one cell")
        if self.v_start < 1 or self.v_end < 1:
            raise ParameterError("ramp volumes must be at least one cell")
        if self.direction not in DIRECTIONS:
            raise ParameterError(f"direction must be one of {DIRECTIONS}")
        if self.direction == "down" and self.v_end > self.v_start:
            raise ParameterError("a downward ramp needs v_end <= v_start")
        if self.direction != "down" and self.v_end < self.v_start:
            raise ParameterError("an upward ramp needs v_end >= v_start")
        if self.insertions and self.direction != "up":
            raise ParameterError("insertion events apply to upward ramps only")


def volume_grid(a: int, b: int, dV: int) -> list[int]:
    """``a, a +/- dV, ...`` ending exactly at ``b``."""
    step = dV if b >= a else -dV
    vols = list(range(a, b, step)) if a != b else []
    vols.append(b)
    return vols


@dataclass
class RampRecord:
    leg: int
    segment: str
    target_phase: int
    volume_cells: int
    energy: float
    iterations: int
    converged: bool
    cells_changed: int  # net label change against the previous leg's stationary state
    transition: bool = False
    snapshot: LabelField | None = field(default=None, repr=False)
    snapshot_ref: str | None = None

    def row(self):
        return (self.leg, self.volume_cells, self.energy, self.iterations, int(self.transition))


def _targets_for(labels: LabelField, phase: int, volume: int, base: Sequence[int]) -> VolumeTargets:
    counts = list(base)
    counts[phase - 1] = volume
    bubbles = counts[:-1]
    rest = labels.geom.n_cells - sum(bubbles)
    if rest < 0:
        raise InfeasibleRampError(f"bubble {phase} at {volume} cells leaves no room for the complement")
    return VolumeTargets(tuple(bubbles) + (rest,))


def quasi_static_ramp(
    labels: LabelField,
    schedule: FlowSchedule,
    kernel: Kernel,
    params: SimParams,
    *,
    on_nonconverged: str = "flag",
    keep_snapshots: bool = False,
    on_leg: Callable[[RampRecord, LabelField], None] | None = None,
    change_factor: float = 5.0,
    jump_factor: float = 10.0,
) -> list[RampRecord]:
    """Grow (or shrink) one bubble in small steps, relaxing to stationarity after each.

    Only the ramped bubble and the complement change volume; the others keep
    their cell counts. Transition flags are set once all legs are done.
    """
    if on_nonconverged not in ("flag", "abort"):
        raise ParameterError("on_nonconverged must be 'flag' or 'abort'")
    if not 1 <= schedule.target_phase < labels.n_phases:
        raise ParameterError(f"target phase {schedule.target_phase} is not a bubble")
    records: list[RampRecord] = []
    state = labels
    base = [int(c) for c in labels.counts()]

    def run_segment(phase: int, vols: list[int], segment: str):
        nonlocal state, base
        for vol in vols:
            targets = _targets_for(state, phase, vol, base)
            new, trace, converged = evolve(state, kernel, targets, params)
            if not converged:
                if on_nonconverged == "abort":
                    raise ConvergenceError(f"leg {len(records)} did not reach a stationary state")
                logger.warning("leg %d (volume %d) did not converge", len(records), vol)
            rec = RampRecord(
                leg=len(records),
                segment=segment,
                target_phase=phase,
                volume_cells=vol,
                energy=float(trace.records[-1].energy),
                iterations=len(trace),
                converged=converged,
                cells_changed=int(np.count_nonzero(new.labels != state.labels))
                if new.n_phases == state.n_phases
                else int(new.geom.n_cells),
                snapshot=new.copy() if keep_snapshots else None,
            )
            records.append(rec)
            if on_leg is not None:
                on_leg(rec, new)
            state = new
            base = list(targets.counts)

    phase = schedule.target_phase
    if schedule.direction == "up":
        vols = volume_grid(schedule.v_start, schedule.v_end, schedule.dV)
        run_segment(phase, vols, "up")
        for k, event in enumerate(schedule.insertions):
            state = insert_bubble(state, event.position, event.v, event.where)
            base = [int(c) for c in state.counts()]
            phase = state.n_phases - 1
            run_segment(phase, volume_grid(event.v, schedule.v_end, schedule.dV), f"up{k + 1}")
    elif schedule.direction == "down":
        run_segment(phase, volume_grid(schedule.v_start, schedule.v_end, schedule.dV), "down")
    else:
        up = volume_grid(schedule.v_start, schedule.v_end, schedule.dV)
        run_segment(phase, up, "up")
        run_segment(phase, up[::-1][1:], "down")
    detect_transitions(records, change_factor=change_factor, jump_factor=jump_factor)
    return records


def detect_transitions(records: list[RampRecord], change_factor: float = 5.0, jump_factor: float = 10.0, window: int = 3) -> None:
    """Flag legs whose relaxation is a configuration change.

    A leg is flagged when its net cell change exceeds ``change_factor`` times
    the median of its neighbours (within ``window`` legs of the same
    segment), or when its energy step exceeds ``jump_factor`` times the
    neighbours' median energy step.
    """
    segments: dict[str, list[RampRecord]] = {}
    for rec in records:
        segments.setdefault(rec.segment, []).append(rec)
    for legs in segments.values():
        n = len(legs)
        changes = np.array([r.cells_changed for r in legs], dtype=float)
        energies = np.array([r.energy for r in legs])
        steps = np.abs(np.diff(energies, prepend=np.nan))
        dvs = np.abs(np.diff([r.volume_cells for r in legs], prepend=legs[0].volume_cells))
        for k in range(1, n):
            nbr = [j for j in range(max(1, k - window), min(n, k + window + 1)) if j != k]
            if not nbr:
                continue
            floor = max(float(np.median(dvs[nbr])), 1.0)
            med_change = max(float(np.median(changes[nbr])), floor)
            med_step = float(np.median(steps[nbr]))
            big_change = changes[k] > change_factor * med_change
            big_jump = med_step > 0 and steps[k] > jump_factor * med_step
            legs[k].transition = bool(big_change or big_jump)


# -- restart search


@dataclass
class SearchResult:
    labels: LabelField
    energy: float
    seed: int
    iterations: int
    hits: int = 1
    seeds: list[int] = field(default_factory=list)


def _interface_band(lab: np.ndarray) -> np.ndarray:
    band = np.zeros(lab.shape, dtype=bool)
    for axis in range(lab.ndim):
        for shift in (1, -1):
            band |= lab != np.roll(lab, shift, axis=axis)
    return band


def _unwrapped_coords(labels: LabelField, core: bool = False):
    """Bubble-cell coordinates relative to the cluster centroid, unwrapped periodically.

    With ``core`` only cells whose face neighbours all share their label are
    returned. Phases are 0-based.
    """
    geom = labels.geom
    bubble = labels.labels != labels.complement
    idx = np.nonzero(bubble)
    coords = np.empty((idx[0].size, geom.ndim))
    for axis in range(geom.ndim):
        L = geom.lengths[axis]
        x = idx[axis] * geom.spacing[axis]
        # circular mean picks the unwrapping centre
        ang = 2 * np.pi * x / L
        centre = np.angle(np.mean(np.exp(1j * ang))) * L / (2 * np.pi)
        coords[:, axis] = (x - centre + L / 2) % L - L / 2
    coords -= coords.mean(axis=0)
    phases = labels.labels[bubble] - 1
    if core:
        keep = ~_interface_band(labels.labels)[bubble]
        return coords[keep], phases[keep]
    return coords, phases


def _centroids(coords, phases, n):
    out = np.zeros((n, coords.shape[1]))
    for axis in range(coords.shape[1]):
        out[:, axis] = np.bincount(phases, weights=coords[:, axis], minlength=n)
    counts = np.maximum(np.bincount(phases, minlength=n), 1)
    return out / counts[:, None]


def _rotation_starts(d: int, rng: np.random.Generator, n_random: int = 64):
    if d == 2:
        for theta in np.linspace(0, 2 * np.pi, 36, endpoint=False):
            c, s = np.cos(theta), np.sin(theta)
            yield np.array([[c, -s], [s, c]])
    else:
        from scipy.spatial.transform import Rotation

        for q in Rotation.random(n_random, random_state=rng.integers(2**31)).as_matrix():
            yield q


def _kabsch(p, q, allow_reflection: bool):
    """Orthogonal R minimizing |p - q R^T|."""
    u, _, vt = np.linalg.svd(q.T @ p)
    r = (u @ vt).T
    if not allow_reflection and np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = (u @ vt).T
    return r


def _align_centroids(ca, cb, iters: int = 20):
    """Rigid (rotation or reflection) map of ``cb`` onto ``ca`` by ICP with optimal matching."""
    d = ca.shape[1]
    rng = np.random.default_rng(0)
    best = (np.inf, np.eye(d))
    for mirror in (False, True):
        flip = np.eye(d)
        if mirror:
            flip[0, 0] = -1
        for r0 in _rotation_starts(d, rng):
            r = r0 @ flip
            for _ in range(iters):
                moved = cb @ r.T
                cost = ((ca[:, None, :] - moved[None, :, :]) ** 2).sum(-1)
                rows, cols = linear_sum_assignment(cost)
                r_new = _kabsch(ca[rows], cb[cols], allow_reflection=True)
                if np.allclose(r_new, r):
                    break
                r = r_new
            err = float(((ca[rows] - cb[cols] @ r.T) ** 2).sum())
            if err < best[0] - 1e-12:
                best = (err, r)
    return best[1]


def label_overlap(a: LabelField, b: LabelField) -> float:
    """Fraction of bubble cells matched under the best rigid motion and bubble relabelling.

    Both clusters are centred on their centroid; the rotation (or
    reflection) comes from aligning the bubble centroids, after which each
    bubble cell of ``a`` is looked up in ``b`` at the nearest cell. Cells on
    an interface of ``a`` are left out: rasterizing a rotated cluster moves
    them by up to half a cell regardless of shape agreement.
    """
    if a.n_phases != b.n_phases or a.geom.dims != b.geom.dims:
        return 0.0
    n = a.n_bubbles
    xa, pa = _unwrapped_coords(a)
    xb, pb = _unwrapped_coords(b)
    if xa.shape[0] == 0 or xb.shape[0] == 0:
        return float(xa.shape[0] == xb.shape[0])
    r = _align_centroids(_centroids(xa, pa, n), _centroids(xb, pb, n))
    xa, pa = _unwrapped_coords(a, core=True)
    if xa.shape[0] == 0:
        return 1.0
    geom = b.geom
    grid = np.full(geom.dims, -1, dtype=np.int64)
    spacing = np.asarray(geom.spacing)
    dims = np.asarray(geom.dims)
    # index b by its own cells; rounding centred coordinates would tie at half cells
    ib = np.stack(np.nonzero(b.labels != b.complement), axis=1)
    grid[tuple(ib.T)] = pb
    offset = ib[0] * spacing - xb[0]
    # x_a ~ R x_b, so b's frame is R^T x_a
    ia = np.mod(np.rint((xa @ r + offset) / spacing).astype(np.int64), dims)
    hit = grid[tuple(ia.T)]
    ok = hit >= 0
    conf = np.zeros((n, n))
    np.add.at(conf, (pa[ok], hit[ok]), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return float(conf[rows, cols].sum() / xa.shape[0])


def same_configuration(a: SearchResult, b: SearchResult, energy_tol: float = 1e-3, overlap_tol: float = 0.9) -> bool:
    rel = abs(a.energy - b.energy) / max(abs(a.energy), abs(b.energy), 1e-300)
    if rel >= energy_tol:
        return False
    return label_overlap(a.labels, b.labels) > overlap_tol


def _one_restart(args):
    geom, volumes, seed, kernel_tau, params, inner_box = args
    kernel = Kernel(geom, kernel_tau)
    spec = SeedSpec(volumes.n_phases - 1, volumes, rng_seed=seed, inner_box=inner_box)
    init = random_voronoi_init(geom, spec, kernel, params.auction)
    labels, trace, converged = evolve(init, kernel, volumes, params)
    return seed, labels, float(trace.records[-1].energy), len(trace), converged


def multi_restart_search(
    geom: GridGeom,
    volumes: VolumeTargets,
    n_restarts: int,
    kernel: Kernel,
    params: SimParams,
    seeds: Sequence[int] | None = None,
    *,
    inner_box="auto",
    energy_tol: float = 1e-3,
    overlap_tol: float = 0.9,
    workers: int | None = None,
):
    """Evolve many random initial foams; return distinct stationary states by energy.

    Returns ``(results, n_unconverged)`` with results sorted by ascending
    energy; restarts landing on an already-found configuration increase its
    ``hits``.
    """
    if n_restarts < 1:
        raise ParameterError("need at least one restart")
    if seeds is None:
        seeds = list(range(n_restarts))
    seeds = [int(s) for s in seeds][:n_restarts]
    if len(seeds) < n_restarts:
        raise ParameterError("fewer seeds than restarts")
    if workers is None:
        workers = max(1, int(os.environ.get("FOAMLAB_THREADS", "1")))
    jobs = [(geom, volumes, s, kernel.tau, params, inner_box) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_restart, jobs))
    else:
        outcomes = [_one_restart(job) for job in jobs]
    unconverged = 0
    found: list[SearchResult] = []
    # deterministic regardless of completion order: seeds in the given order
    for seed, labels, energy, iters, converged in outcomes:
        if not converged:
            unconverged += 1
            continue
        cand = SearchResult(labels, energy, seed, iters, seeds=[seed])
        for prev in found:
            if same_configuration(prev, cand, energy_tol, overlap_tol):
                prev.hits += 1
                prev.seeds.append(seed)
                break
        else:
            found.append(cand)
    found.sort(key=lambda r: (r.energy, r.seed))
    return found, unconverged
