"""Union-find partition of ``{1..n}`` with block statistics kept up to date."""

from __future__ import annotations

from typing import Iterable, List, Sequence, Tuple

import numpy as np


class Partition:
    """Disjoint-set forest over ``1..n`` (union by size, path compression).

    Besides the forest it maintains the block count, the number of singleton
    blocks, the largest block size and, lazily, the second largest one.
    Element ``0`` is unused so that elements are their own indices.
    """

    __slots__ = ("n", "parent", "size", "block_count", "singleton_count",
                 "largest", "_hist", "_second", "_second_dirty")

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"partition needs n >= 1, got {n}")
        self.n = n
        self.parent = list(range(n + 1))
        self.size = [1] * (n + 1)
        self.size[0] = 0
        self.block_count = n
        self.singleton_count = n
        self.largest = 1
        # block size -> number of blocks of that size
        self._hist = {1: n}
        self._second = 1 if n > 1 else 0
        self._second_dirty = False

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], n: int) -> "Partition":
        part = cls(n)
        seen = set()
        for block in blocks:
            block = list(block)
            if seen.intersection(block):
                raise ValueError("blocks overlap")
            seen.update(block)
            if len(block) > 1:
                part.merge(block)
        if seen != set(range(1, n + 1)):
            raise ValueError("blocks do not cover 1..n")
        return part

    def copy(self) -> "Partition":
        other = Partition.__new__(Partition)
        for name in self.__slots__:
            value = getattr(self, name)
            setattr(other, name, value.copy() if isinstance(value, (list, dict)) else value)
        return other

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def block_of(self, x: int) -> Tuple[int, int]:
        """``(root id, block size)`` of the block containing ``x``."""
        if not 1 <= x <= self.n:
            raise IndexError(f"element {x} outside 1..{self.n}")
        root = self.find(x)
        return root, self.size[root]

    def merge(self, elements: Sequence[int]) -> int:
        """Merge every block touched by ``elements``; returns the number touched."""
        find = self.find
        roots = {find(x) for x in elements}
        if len(roots) > 1:
            self._merge_roots(roots)
        return len(roots)

    def _merge_roots(self, roots) -> None:
        size, parent, hist = self.size, self.parent, self._hist
        big = max(roots, key=size.__getitem__)
        second = self._second
        total = 0
        for r in roots:
            s = size[r]
            total += s
            c = hist[s] - 1
            if c:
                hist[s] = c
            else:
                del hist[s]
            if s == 1:
                self.singleton_count -= 1
            if s >= second:
                self._second_dirty = True
            if r != big:
                parent[r] = big
        size[big] = total
        hist[total] = hist.get(total, 0) + 1
        self.block_count -= len(roots) - 1
        if total > self.largest:
            self.largest = total
        if total >= second:
            self._second_dirty = True

    @property
    def second_largest(self) -> int:
        if self._second_dirty:
            hist, top = self._hist, self.largest
            if hist.get(top, 0) >= 2:
                self._second = top
            else:
                self._second = max((s for s in hist if s != top), default=0)
            self._second_dirty = False
        return self._second

    def block_sizes(self) -> List[int]:
        return [self.size[r] for r in range(1, self.n + 1) if self.parent[r] == r]

    def labels(self) -> np.ndarray:
        """Root id of every element, as an array indexed ``0..n-1`` for elements ``1..n``."""
        find = self.find
        return np.array([find(x) for x in range(1, self.n + 1)], dtype=np.int64)

    def blocks(self) -> List[List[int]]:
        groups = {}
        for x in range(1, self.n + 1):
            groups.setdefault(self.find(x), []).append(x)
        return sorted(groups.values())

    def is_finer_than(self, other: "Partition") -> bool:
        if other.n != self.n:
            raise ValueError("partitions of different sets")
        mine = self.labels()
        theirs = other.labels()
        # finer iff each of my blocks maps into a single block of `other`
        first = {}
        for a, b in zip(mine.tolist(), theirs.tolist()):
            if first.setdefault(a, b) != b:
                return False
        return True

    def __repr__(self) -> str:
        return (f"Partition(n={self.n}, blocks={self.block_count}, "
                f"singletons={self.singleton_count}, largest={self.largest})")


def as_partition(obj, n: int = None) -> Partition:
    """Accept a :class:`Partition` or a list of blocks."""
    if isinstance(obj, Partition):
        return obj
    blocks = [list(b) for b in obj]
    if n is None:
        n = sum(len(b) for b in blocks)
    return Partition.from_blocks(blocks, n)
