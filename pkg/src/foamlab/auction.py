"""Membership auction with epsilon scaling.

Given per-phase scores ``Phi_i(x)`` and integer capacities, find prices
``lambda_i`` and an assignment in which every cell takes (up to epsilon) the
phase maximising ``Phi_i(x) - lambda_i`` while every phase holds exactly its
target number of cells.

Each epsilon level restarts from an empty assignment; prices carry over
between levels. Every phase keeps a binary min-heap of its members keyed on
the bid recorded when the member was admitted, so the cheapest member can be
evicted in ``O(log n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import AuctionError, ParameterError

POST_EVICTION = 0
PRE_EVICTION = 1

_OK = 0
_CAP_EXCEEDED = 1


@dataclass(frozen=True)
class AuctionParams:
    """Epsilon-scaling controls.

    ``eps_min`` bounds the total score deficit of the final assignment; the
    last epsilon level is below ``eps_min / n_cells``.
    """

    eps0: float = 0.1
    alpha: float = 4.0
    eps_min: float = 1e-7
    price_rule: str = "post"
    max_bids_per_cell: int = 10_000

    def __post_init__(self):
        if not (self.eps_min > 0 and self.eps0 >= self.eps_min):
            raise ParameterError("need eps0 >= eps_min > 0")
        if not self.alpha > 1:
            raise ParameterError("alpha must exceed 1")
        if self.price_rule not in ("post", "pre"):
            raise ParameterError("price_rule must be 'post' or 'pre'")
        if self.max_bids_per_cell < 1:
            raise ParameterError("max_bids_per_cell must be positive")

    def eps_bar(self, n_cells: int) -> float:
        return self.eps_min / n_cells


@dataclass(frozen=True)
class VolumeTargets:
    """Exact cell count per phase, complement last."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ParameterError(f"volume targets must be non-negative: {counts}")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_bubbles(cls, bubble_counts, n_cells: int) -> "VolumeTargets":
        """Bubble counts plus a complement absorbing the remainder."""
        bubble_counts = [int(c) for c in bubble_counts]
        rest = n_cells - sum(bubble_counts)
        if rest < 0:
            raise ParameterError("bubble volumes exceed the domain")
        return cls(tuple(bubble_counts) + (rest,))

    @property
    def n_phases(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def check(self, n_cells: int) -> None:
        if self.total != n_cells:
            raise ParameterError(
                f"volume targets sum to {self.total}, grid has {n_cells} cells"
            )


def epsilon_schedule(params: AuctionParams, n_cells: int | None = None, eps_bar: float | None = None):
    """Geometric sequence eps0, eps0/alpha, ... ending at the first value below eps_bar."""
    if eps_bar is None:
        if n_cells is None:
            raise ParameterError("give n_cells or eps_bar")
        eps_bar = params.eps_bar(n_cells)
    seq = [float(params.eps0)]
    while seq[-1] >= eps_bar:
        seq.append(seq[-1] / params.alpha)
    return tuple(seq)


@dataclass
class AuctionResult:
    labels: np.ndarray  # 0-based phase per cell
    prices: np.ndarray
    eps_final: float
    bids: int
    levels: int


# -- heap helpers over a flat storage array; phase p owns slots [off[p], off[p] + cap[p])


@numba.njit(cache=True, inline="always")
def _less(bid, a, b):
    if bid[a] < bid[b]:
        return True
    if bid[a] > bid[b]:
        return False
    return a < b


@numba.njit(cache=True)
def _heap_push(heap, off, size, p, cell, bid):
    base = off[p]
    k = size[p]
    heap[base + k] = cell
    size[p] = k + 1
    while k > 0:
        parent = (k - 1) >> 1
        if _less(bid, heap[base + k], heap[base + parent]):
            tmp = heap[base + k]
            heap[base + k] = heap[base + parent]
            heap[base + parent] = tmp
            k = parent
        else:
            break


@numba.njit(cache=True)
def _heap_replace_top(heap, off, size, p, cell, bid):
    """Pop the minimum and push ``cell`` in one sift; returns the evicted cell."""
    base = off[p]
    n = size[p]
    top = heap[base]
    heap[base] = cell
    k = 0
    while True:
        left = 2 * k + 1
        if left >= n:
            break
        child = left
        right = left + 1
        if right < n and _less(bid, heap[base + right], heap[base + left]):
            child = right
        if _less(bid, heap[base + child], heap[base + k]):
            tmp = heap[base + k]
            heap[base + k] = heap[base + child]
            heap[base + child] = tmp
            k = child
        else:
            break
    return top


@numba.njit(cache=True)
def _auction_core(scores, cap, eps_list, rule, max_bids, prices, assign, bid, check_monotone):
    n_cells, n_phases = scores.shape
    off = np.zeros(n_phases, dtype=np.int64)
    for p in range(1, n_phases):
        off[p] = off[p - 1] + cap[p - 1]
    heap = np.empty(n_cells, dtype=np.int64)
    size = np.zeros(n_phases, dtype=np.int64)
    queue = np.empty(n_cells, dtype=np.int64)
    active = np.empty(n_phases, dtype=np.int64)
    n_active = 0
    for p in range(n_phases):
        if cap[p] > 0:
            active[n_active] = p
            n_active += 1
    total_bids = 0
    monotone = True
    for level in range(eps_list.size):
        eps = eps_list[level]
        for p in range(n_phases):
            size[p] = 0
        for x in range(n_cells):
            assign[x] = -1
            queue[x] = x
        head = 0
        count = n_cells
        level_bids = 0
        while count > 0:
            x = queue[head]
            head += 1
            if head == n_cells:
                head = 0
            count -= 1
            # best and second-best phase by Phi - lambda; ties -> lowest index
            best = -1
            v1 = -np.inf
            v2 = -np.inf
            for a in range(n_active):
                p = active[a]
                v = scores[x, p] - prices[p]
                if v > v1:
                    v2 = v1
                    v1 = v
                    best = p
                elif v > v2:
                    v2 = v
            if n_active == 1:
                v2 = v1
            b = prices[best] + eps + (v1 - v2)
            bid[x] = b
            old_price = prices[best]
            if size[best] == cap[best]:
                y = _heap_replace_top(heap, off, size, best, x, bid)
                assign[y] = -1
                assign[x] = best
                tail = head + count
                if tail >= n_cells:
                    tail -= n_cells
                queue[tail] = y
                count += 1
                if rule == POST_EVICTION:
                    prices[best] = bid[heap[off[best]]]
                else:
                    prices[best] = bid[y]
            else:
                _heap_push(heap, off, size, best, x, bid)
                assign[x] = best
                if size[best] == cap[best]:
                    prices[best] = bid[heap[off[best]]]
            if check_monotone and prices[best] < old_price:
                monotone = False
            level_bids += 1
            total_bids += 1
            if level_bids > max_bids:
                return _CAP_EXCEEDED, total_bids, level, monotone
    return _OK, total_bids, eps_list.size, monotone


def assign(scores, targets: VolumeTargets, params: AuctionParams = AuctionParams(), *, check_monotone: bool = False) -> AuctionResult:
    """Volume-exact epsilon-optimal thresholding.

    Parameters
    ----------
    scores : array, shape (n_cells, n_phases)
        ``Phi_i(x)``; larger is better.
    targets : VolumeTargets
        Exact number of cells each phase must receive.

    Returns
    -------
    AuctionResult
        0-based labels, final prices (``inf`` for zero-capacity phases) and
        the last epsilon used.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ParameterError("scores must be a (cells, phases) array")
    n_cells, n_phases = scores.shape
    if n_phases < 2:
        raise ParameterError("the auction needs at least two phases")
    if targets.n_phases != n_phases:
        raise ParameterError(
            f"{targets.n_phases} volume targets for {n_phases} phases"
        )
    targets.check(n_cells)
    if not np.all(np.isfinite(scores)):
        raise ParameterError("scores must be finite")
    cap = targets.as_array()
    eps_list = np.asarray(epsilon_schedule(params, n_cells), dtype=np.float64)
    prices = np.zeros(n_phases)
    labels = np.empty(n_cells, dtype=np.int64)
    bid = np.zeros(n_cells)
    rule = POST_EVICTION if params.price_rule == "post" else PRE_EVICTION
    max_bids = params.max_bids_per_cell * n_cells
    status, bids, level, monotone = _auction_core(
        scores, cap, eps_list, rule, max_bids, prices, labels, bid, check_monotone
    )
    if status != _OK:
        raise AuctionError(
            f"auction exceeded {max_bids} bids at epsilon level {level} "
            f"(eps={eps_list[level]:.3e})",
            state={
                "level": int(level),
                "eps": float(eps_list[level]),
                "prices": prices.tolist(),
                "unassigned": int((labels < 0).sum()),
                "targets": list(targets.counts),
            },
        )
    if check_monotone and not monotone:
        raise AuctionError("a price decreased within an epsilon level", state={"prices": prices.tolist()})
    prices[cap == 0] = math.inf
    return AuctionResult(labels, prices, float(eps_list[-1]), int(bids), int(eps_list.size))
