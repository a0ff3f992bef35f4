"""Poisson tuple-draw event engine.

Tuples arrive at the events of a unit-rate Poisson process. Each tuple has a
length drawn from ``p`` and coordinates drawn uniformly with replacement from
``{1..n}``; all blocks it touches are merged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..dist import LengthDistribution, m_star, pgf_eval
from .partition import Partition

_BATCH = 4096


@dataclass(frozen=True)
class TupleEvent:
    time: float
    tuple: Tuple[int, ...]

    def __post_init__(self):
        if len(self.tuple) < 1:
            raise ValueError("a tuple has length >= 1")

    @property
    def is_trivial(self) -> bool:
        return len(set(self.tuple)) == 1


class TupleEventLog:
    """Time-ordered tuple draws stored in compressed-row form.

    ``elements[offsets[i]:offsets[i+1]]`` is the ``i``-th tuple (elements are
    ``1..n``). ``meta`` carries the generation parameters.
    """

    def __init__(self, n: int, times, offsets, elements, meta: Optional[dict] = None):
        self.n = int(n)
        self.times = np.asarray(times, dtype=float)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.meta = dict(meta or {})
        if self.offsets.size != self.times.size + 1 or self.offsets[0] != 0:
            raise ValueError("offsets must have one more entry than times and start at 0")
        if self.elements.size != self.offsets[-1]:
            raise ValueError("offsets do not match the element array")
        if np.any(np.diff(self.offsets) < 1):
            raise ValueError("every tuple has length >= 1")
        if self.elements.size and (self.elements.min() < 1 or self.elements.max() > self.n):
            raise ValueError(f"tuple elements must lie in 1..{self.n}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")

    @classmethod
    def from_tuples(cls, n: int, tuples: Sequence[Sequence[int]], times=None, meta=None):
        tuples = [tuple(int(x) for x in w) for w in tuples]
        if times is None:
            times = np.arange(1, len(tuples) + 1, dtype=float)
        lengths = np.array([len(w) for w in tuples], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        elements = np.array([x for w in tuples for x in w], dtype=np.int64)
        return cls(n, times, offsets, elements, meta)

    def __len__(self) -> int:
        return self.times.size

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def tuple_at(self, i: int) -> Tuple[int, ...]:
        return tuple(self.elements[self.offsets[i]:self.offsets[i + 1]].tolist())

    def __iter__(self) -> Iterator[TupleEvent]:
        for i in range(len(self)):
            yield TupleEvent(float(self.times[i]), self.tuple_at(i))

    def until(self, t: float) -> "TupleEventLog":
        """Events with time ``<= t``."""
        m = int(np.searchsorted(self.times, t, side="right"))
        return TupleEventLog(self.n, self.times[:m], self.offsets[:m + 1],
                             self.elements[:self.offsets[m]], self.meta)

    def nontrivial_mask(self) -> np.ndarray:
        if not len(self):
            return np.zeros(0, dtype=bool)
        starts = self.offsets[:-1]
        lo = np.minimum.reduceat(self.elements, starts)
        hi = np.maximum.reduceat(self.elements, starts)
        return lo != hi

    def to_csv(self, path_or_file) -> None:
        """Rows ``time,length,e1,e2,...`` (variable width)."""
        def write(fh):
            w = csv.writer(fh)
            w.writerow(["time", "length", "e1", "e2", "..."])
            for i in range(len(self)):
                w.writerow([repr(float(self.times[i])), int(self.lengths[i]), *self.tuple_at(i)])
        _with_file(path_or_file, write)


def _with_file(path_or_file, fn):
    if hasattr(path_or_file, "write"):
        fn(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            fn(fh)


@dataclass
class TrajectoryObservables:
    """Block statistics after every event (first row: the initial state)."""

    time: np.ndarray
    block_count: np.ndarray
    singleton_count: np.ndarray
    largest: np.ndarray
    second_largest: np.ndarray
    T_singleton: Optional[float] = None
    T_coal: Optional[float] = None
    truncated: bool = False
    horizon: float = math.inf
    # state (block_count, singleton_count, largest, second_largest) at requested times
    snapshots: Dict[float, Tuple[int, int, int, int]] = field(default_factory=dict)

    def to_csv(self, path_or_file) -> None:
        def write(fh):
            w = csv.writer(fh)
            w.writerow(["time", "block_count", "singleton_count", "largest", "second_largest"])
            for row in zip(self.time.tolist(), self.block_count.tolist(),
                           self.singleton_count.tolist(), self.largest.tolist(),
                           self.second_largest.tolist()):
                w.writerow([repr(row[0]), *row[1:]])
        _with_file(path_or_file, write)


class Simulation(NamedTuple):
    log: TupleEventLog
    observables: TrajectoryObservables
    partition: Partition


def sample_tuple(n: int, p: LengthDistribution, rng: np.random.Generator) -> Tuple[int, ...]:
    """One draw of the tuple measure: length ``K ~ p``, then ``K`` uniform elements."""
    if n < 2:
        raise ValueError("n >= 2 required")
    k = p.sample(rng)
    return tuple((rng.integers(0, n, size=k) + 1).tolist())


def draw_tuples(n: int, p: LengthDistribution, count: int, rng: np.random.Generator):
    """``count`` iid tuples as ``(lengths, flat elements)``."""
    lengths = p.sample(rng, count)
    elements = rng.integers(1, n + 1, size=int(lengths.sum()))
    return lengths, elements


def _draw_nontrivial(n, p, count, rng):
    """Rejection sampling of ``count`` nontrivial tuples."""
    lengths_out, elements_out, have = [], [], 0
    while have < count:
        need = count - have
        lengths, elements = draw_tuples(n, p, max(2 * need, 16), rng)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        keep = np.minimum.reduceat(elements, starts) != np.maximum.reduceat(elements, starts)
        idx = np.flatnonzero(keep)[:need]
        for i in idx.tolist():
            elements_out.append(elements[starts[i]:starts[i] + lengths[i]])
        lengths_out.append(lengths[idx])
        have += idx.size
    return np.concatenate(lengths_out), np.concatenate(elements_out)


def nontrivial_rate(n: int, p: LengthDistribution) -> float:
    """Total mass of nontrivial tuples: ``1 - n G_p(1/n)``."""
    return 1.0 - n * pgf_eval(p, 1.0 / n)


def default_coalescence_cap(n: int, p: LengthDistribution) -> float:
    return 10.0 * n * math.log(n) / m_star(p)


def sample_log(n: int, p: LengthDistribution, horizon: float, rng: np.random.Generator,
               skip_trivial: bool = False) -> TupleEventLog:
    """Poisson tuple set on ``[0, horizon]`` drawn in one shot (no dynamics).

    Same law as the events of :func:`simulate` up to ``horizon``; used where
    only the state at a fixed time matters.
    """
    rate = nontrivial_rate(n, p) if skip_trivial else 1.0
    count = int(rng.poisson(rate * horizon))
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    if skip_trivial:
        lengths, elements = _draw_nontrivial(n, p, count, rng)
    else:
        lengths, elements = draw_tuples(n, p, count, rng)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    return TupleEventLog(n, times, offsets, elements,
                         {"n": n, "p": p.label, "horizon": horizon, "skip_trivial": skip_trivial})


def simulate(n: int, p: LengthDistribution, horizon: Optional[float] = None, seed=None, *,
             until_coalescence: bool = False, skip_trivial: bool = False,
             record: bool = True, snapshot_times: Sequence[float] = (),
             rng: Optional[np.random.Generator] = None) -> Simulation:
    """Run the coalescent from all singletons.

    In horizon mode every event with time ``<= horizon`` is applied. With
    ``until_coalescence`` the run stops at the first time the partition is a
    single block; ``horizon`` (default ``10 n log n / m*``) is then a cap and
    hitting it sets ``observables.truncated``.
    """
    if n < 2:
        raise ValueError("n >= 2 required (n = 1 is degenerate)")
    if until_coalescence:
        cap = default_coalescence_cap(n, p) if horizon is None else float(horizon)
    else:
        if horizon is None or not horizon > 0:
            raise ValueError("horizon > 0 required unless until_coalescence is set")
        cap = float(horizon)
    if rng is None:
        rng = np.random.default_rng(seed)
    rate = nontrivial_rate(n, p) if skip_trivial else 1.0

    part = Partition(n)
    snaps = sorted(float(s) for s in snapshot_times)
    snapshots = {}
    rows = ([0.0], [n], [n], [1], [part.second_largest]) if record else None
    t_single = t_coal = None
    times_out, lengths_out, elements_out = [], [], []
    t_last = 0.0
    done = False
    while not done:
        gaps = rng.exponential(1.0 / rate, size=_BATCH) if rate > 0 else np.full(_BATCH, np.inf)
        times = t_last + np.cumsum(gaps)
        if skip_trivial:
            lengths, elements = _draw_nontrivial(n, p, _BATCH, rng)
        else:
            lengths, elements = draw_tuples(n, p, _BATCH, rng)
        ends = np.cumsum(lengths)
        t_list, e_list, end_list = times.tolist(), elements.tolist(), ends.tolist()
        used = 0
        start = 0
        for i in range(_BATCH):
            t = t_list[i]
            if t > cap:
                done = True
                break
            while snaps and snaps[0] < t:
                snapshots[snaps.pop(0)] = (part.block_count, part.singleton_count,
                                           part.largest, part.second_largest)
            end = end_list[i]
            part.merge(e_list[start:end])
            start = end
            used = i + 1
            if record:
                rows[0].append(t)
                rows[1].append(part.block_count)
                rows[2].append(part.singleton_count)
                rows[3].append(part.largest)
                rows[4].append(part.second_largest)
            if t_single is None and part.singleton_count == 0:
                t_single = t
            if part.block_count == 1:
                if t_coal is None:
                    t_coal = t
                if until_coalescence:
                    done = True
                    break
        times_out.append(times[:used])
        lengths_out.append(lengths[:used])
        elements_out.append(elements[:ends[used - 1] if used else 0])
        t_last = float(times[-1])
    for s in snaps:
        if s <= cap or t_coal is not None:
            snapshots[s] = (part.block_count, part.singleton_count,
                            part.largest, part.second_largest)

    times = np.concatenate(times_out)
    lengths = np.concatenate(lengths_out)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    meta = {"n": n, "p": p.label, "horizon": cap, "seed": _seed_repr(seed),
            "until_coalescence": until_coalescence, "skip_trivial": skip_trivial}
    log = TupleEventLog(n, times, offsets, np.concatenate(elements_out), meta)
    truncated = until_coalescence and t_coal is None
    if record:
        obs = TrajectoryObservables(*(np.asarray(r) for r in rows), T_singleton=t_single,
                                    T_coal=t_coal, truncated=truncated, horizon=cap,
                                    snapshots=snapshots)
    else:
        empty = np.zeros(0)
        obs = TrajectoryObservables(empty, empty, empty, empty, empty, T_singleton=t_single,
                                    T_coal=t_coal, truncated=truncated, horizon=cap,
                                    snapshots=snapshots)
    return Simulation(log, obs, part)


def _seed_repr(seed):
    if seed is None or isinstance(seed, (int, np.integer)):
        return None if seed is None else int(seed)
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return repr(seed)


def replay(log: TupleEventLog, t: Optional[float] = None) -> Partition:
    """Partition obtained by applying the logged events up to time ``t``."""
    if t is not None:
        log = log.until(t)
    part = Partition(log.n)
    e = log.elements.tolist()
    off = log.offsets.tolist()
    for i in range(len(log)):
        part.merge(e[off[i]:off[i + 1]])
    return part
