"""Vectorized Monte Carlo helpers for states at a fixed time.

These bypass the event loop: a Poisson tuple set is drawn in one shot and
its blocks are read off as connected components of the star graph linking
each tuple's first element to the others.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..dist import LengthDistribution
from .engine import TupleEventLog, draw_tuples


def component_labels(log: TupleEventLog) -> np.ndarray:
    """Block label of each element ``1..n`` (array index ``x - 1``)."""
    n = log.n
    if not len(log):
        return np.arange(n)
    lengths = log.lengths
    heads = np.repeat(log.elements[log.offsets[:-1]], lengths)
    rows = heads - 1
    cols = log.elements - 1
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def block_sizes(labels: np.ndarray) -> np.ndarray:
    """Sizes of all blocks given element labels."""
    counts = np.bincount(labels)
    return counts[counts > 0]


def size_of_block(labels: np.ndarray, x: int) -> int:
    return int(np.count_nonzero(labels == labels[x - 1]))


def largest_two(labels: np.ndarray):
    sizes = np.sort(block_sizes(labels))
    second = int(sizes[-2]) if sizes.size > 1 else 0
    return int(sizes[-1]), second


def singleton_counts_mc(n: int, p: LengthDistribution, t: float, reps: int,
                        rng: np.random.Generator, chunk: int = 100_000) -> np.ndarray:
    """Number of singleton blocks at time ``t`` in ``reps`` independent runs.

    An element is a singleton iff no nontrivial tuple contains it.
    """
    out = np.empty(reps, dtype=np.int64)
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        counts = rng.poisson(t, size=m)
        total = int(counts.sum())
        lengths, elements = draw_tuples(n, p, total, rng)
        covered = np.zeros((m, n), dtype=bool)
        if total:
            starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
            nontrivial = (np.minimum.reduceat(elements, starts)
                          != np.maximum.reduceat(elements, starts))
            owner = np.repeat(np.arange(m), counts)
            elem_owner = np.repeat(owner, lengths)
            elem_keep = np.repeat(nontrivial, lengths)
            covered[elem_owner[elem_keep], elements[elem_keep] - 1] = True
        out[done:done + m] = n - covered.sum(axis=1)
        done += m
    return out


def block_size_samples(n: int, p: LengthDistribution, t: float, reps: int,
                       rng: np.random.Generator, x: int = 1,
                       chunk_elements: int = 2_000_000) -> np.ndarray:
    """``|Pi^(x)(t)|`` in ``reps`` independent runs.

    Runs are packed into one block-diagonal graph per chunk so that a single
    connected-components call serves many replications.
    """
    if not 1 <= x <= n:
        raise IndexError(f"element {x} outside 1..{n}")
    per_chunk = max(1, chunk_elements // n)
    out = np.empty(reps, dtype=np.int64)
    done = 0
    while done < reps:
        m = min(per_chunk, reps - done)
        counts = rng.poisson(t, size=m)
        lengths, elements = draw_tuples(n, p, int(counts.sum()), rng)
        offset = np.repeat(np.repeat(np.arange(m) * n, counts), lengths)
        nodes = elements - 1 + offset
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        heads = np.repeat(nodes[starts], lengths) if lengths.size else nodes
        graph = coo_matrix((np.ones(nodes.size, dtype=np.int8), (heads, nodes)),
                           shape=(m * n, m * n))
        _, labels = connected_components(graph, directed=False)
        sizes = np.bincount(labels)
        out[done:done + m] = sizes[labels[np.arange(m) * n + (x - 1)]]
        done += m
    return out
