"""Breadth-first exploration of the block of an element.

Elements are neutral, active or explored. Starting from ``x``, the smallest
active element is explored at each step: the neutral elements sharing a tuple
with it (among tuples avoiding already explored elements) become active. The
step counts ``xi_k`` of newly activated elements and the dominating counts
``zeta1_k`` / ``zeta2_k`` are recorded along the way.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .coalescent.engine import TupleEventLog, _with_file
from .dist import CompoundPoissonSpec, DiscreteLaw, LengthDistribution, factorial_moment, pgf_eval

NEUTRAL, ACTIVE, EXPLORED = 0, 1, 2


@dataclass
class ExplorationTrace:
    explored: List[int] = field(default_factory=list)
    xi: List[int] = field(default_factory=list)
    zeta1: List[int] = field(default_factory=list)
    zeta2: List[int] = field(default_factory=list)
    active_size: List[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.explored)

    @property
    def block(self) -> frozenset:
        return frozenset(self.explored)

    def dominated(self) -> bool:
        return all(x <= a + b for x, a, b in zip(self.xi, self.zeta1, self.zeta2))

    def hitting_time(self) -> int:
        """``min{k : xi_1 + ... + xi_k <= k - 1}``; equals ``T``."""
        total = 0
        for k, x in enumerate(self.xi, 1):
            total += x
            if total <= k - 1:
                return k
        raise RuntimeError("walk never hits; trace is incomplete")

    def to_csv(self, path_or_file) -> None:
        """Rows ``step,x_k,xi,zeta1,zeta2,active_size``."""
        def write(fh):
            w = csv.writer(fh)
            w.writerow(["step", "x_k", "xi", "zeta1", "zeta2", "active_size"])
            for k, row in enumerate(zip(self.explored, self.xi, self.zeta1, self.zeta2,
                                        self.active_size), 1):
                w.writerow([k, *row])
        _with_file(path_or_file, write)


class TupleIndex:
    """Element -> ids of tuples containing it, for a fixed event log."""

    def __init__(self, log: TupleEventLog):
        self.log = log
        tid = np.repeat(np.arange(len(log)), log.lengths)
        order = np.argsort(log.elements, kind="stable")
        self._tid = tid[order]
        self._bounds = np.searchsorted(log.elements[order], np.arange(log.n + 2))
        self._tuples = [log.tuple_at(i) for i in range(len(log))]

    def containing(self, x: int) -> List[int]:
        ids = self._tid[self._bounds[x]:self._bounds[x + 1]]
        return sorted(set(ids.tolist()))

    def tuple(self, i: int) -> Tuple[int, ...]:
        return self._tuples[i]


def explore_block(x: int, log: TupleEventLog, t: Optional[float] = None,
                  index: Optional[TupleIndex] = None) -> ExplorationTrace:
    """Explore the block of ``x`` in the partition generated by events up to ``t``."""
    if t is not None:
        log = log.until(t)
        index = None
    if not 1 <= x <= log.n:
        raise IndexError(f"element {x} outside 1..{log.n}")
    index = index or TupleIndex(log)
    state = bytearray(log.n + 1)
    state[x] = ACTIVE
    heap = [x]
    n_active = 1
    trace = ExplorationTrace()
    while heap:
        xk = heapq.heappop(heap)
        new = 0
        z1 = z2 = 0
        for i in index.containing(xk):
            w = index.tuple(i)
            weight = len(w) - 1 if len(set(w)) > 1 else 0
            if any(state[y] == EXPLORED for y in w):
                z2 += weight
                continue
            z1 += weight
            for y in w:
                if state[y] == NEUTRAL:
                    state[y] = ACTIVE
                    heapq.heappush(heap, y)
                    new += 1
        state[xk] = EXPLORED
        n_active += new - 1
        trace.explored.append(xk)
        trace.xi.append(new)
        trace.zeta1.append(z1)
        trace.zeta2.append(z2)
        trace.active_size.append(n_active)
    return trace


def dominating_walk(x: int, log: TupleEventLog, t: Optional[float] = None) -> List[Tuple[int, int]]:
    """Per-step ``(zeta1_k, zeta2_k)`` along the exploration of ``x``."""
    trace = explore_block(x, log, t)
    return list(zip(trace.zeta1, trace.zeta2))


def neighbour_count(x: int, forbidden: Iterable[int], log: TupleEventLog,
                    t: Optional[float] = None) -> int:
    """Number of elements outside ``forbidden`` sharing a tuple with ``x``.

    Only tuples containing no forbidden element count; repeated elements are
    counted once.
    """
    if t is not None:
        log = log.until(t)
    bad = np.zeros(log.n + 1, dtype=bool)
    bad[list(forbidden)] = True
    if bad[x]:
        raise ValueError("x must not be forbidden")
    if not len(log):
        return 0
    tid = np.repeat(np.arange(len(log)), log.lengths)
    hits = np.unique(tid[log.elements == x])
    if hits.size == 0:
        return 0
    mine = np.isin(tid, hits)
    tainted = np.unique(tid[mine & bad[log.elements]])
    keep = mine & ~np.isin(tid, tainted)
    others = np.unique(log.elements[keep])
    return int(others.size - (1 if x in others else 0))


def first_step_zeta(x: int, log: TupleEventLog) -> int:
    """``zeta1_1 + zeta2_1``: total ``len - 1`` over nontrivial tuples containing ``x``."""
    if not len(log):
        return 0
    tid = np.repeat(np.arange(len(log)), log.lengths)
    hits = np.unique(tid[log.elements == x])
    if hits.size == 0:
        return 0
    nontrivial = log.nontrivial_mask()[hits]
    return int((log.lengths[hits][nontrivial] - 1).sum())


def zeta_spec(p: LengthDistribution, n: int, t: float) -> CompoundPoissonSpec:
    """Law ``CPois(n t beta_n, nu_n)`` of ``zeta1_1 + zeta2_1`` at time ``n t``.

    ``beta_n = 1 - G(1 - 1/n) - G(1/n)`` is the rate of nontrivial tuples
    containing a given element and ``nu_n(j)`` the law of ``length - 1`` for
    such a tuple.
    """
    beta = 1.0 - pgf_eval(p, 1.0 - 1.0 / n) - pgf_eval(p, 1.0 / n)
    ell = np.arange(p.pmf.size, dtype=float)
    weight = p.pmf * (1.0 - (1.0 - 1.0 / n) ** ell - (1.0 / n) ** ell)
    weight[1] = 0.0  # a length-1 tuple is always trivial; the formula only rounds to 0
    nu = weight[1:] / beta  # index j = ell - 1
    total = math.fsum(nu)
    if total > 1.0:  # beta and the weights round differently
        nu = nu / total
    return CompoundPoissonSpec(n * t * beta, DiscreteLaw(nu, defect=max(1.0 - nu.sum(), 0.0),
                                                         tail_index=p.tail_index,
                                                         tail_tolerance=max(p.tail_tolerance, 1e-12)))


def neighbour_tv_bound(p: LengthDistribution, t: float, n: int, forbidden_size: int) -> float:
    """Upper bound on TV(law of the neighbour count at time ``n t``, ``CPois(t m*, p~)``)."""
    m2 = factorial_moment(p, 2)
    m3 = factorial_moment(p, 3)
    return (2 * t * m2 * (forbidden_size / n + 1 / (2 * n))
            + t / (2 * n) * (1 + m2 + m3 + t * m2 ** 2))
