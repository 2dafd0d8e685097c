"""Group partitions of a coordinate space and group-level primitives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class GroupPartition:
    """A disjoint cover of ``range(n)`` by nonempty index groups.

    Groups are explicit index arrays so block tilings and arbitrary
    partitions go through the same code path.
    """

    n: int
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("partition needs a positive coordinate count")
        if len(self.groups) == 0:
            raise ValueError("partition needs at least one group")
        seen = np.zeros(self.n, dtype=bool)
        for g in self.groups:
            if len(g) == 0:
                raise ValueError("empty group in partition")
            idx = np.asarray(g)
            if idx.min() < 0 or idx.max() >= self.n:
                raise ValueError(f"group index out of range [0, {self.n})")
            if seen[idx].any() or len(set(g)) != len(g):
                raise ValueError("groups overlap")
            seen[idx] = True
        if not seen.all():
            raise ValueError("groups do not cover every coordinate")
        # cached lookup arrays; object.__setattr__ because the dataclass is frozen
        labels = np.empty(self.n, dtype=np.intp)
        for i, g in enumerate(self.groups):
            labels[list(g)] = i
        object.__setattr__(self, "_labels", labels)
        object.__setattr__(self, "_index", [np.asarray(g, dtype=np.intp) for g in self.groups])

    @classmethod
    def from_lists(cls, groups: Iterable[Iterable[int]], n: int | None = None) -> "GroupPartition":
        groups = tuple(tuple(int(i) for i in g) for g in groups)
        if n is None:
            n = 1 + max(max(g) for g in groups if g) if groups else 0
        return cls(n=n, groups=groups)

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "GroupPartition":
        """Consecutive groups with the given sizes."""
        bounds = np.cumsum([0, *sizes])
        return cls(n=int(bounds[-1]), groups=tuple(tuple(range(a, b)) for a, b in zip(bounds[:-1], bounds[1:])))

    @classmethod
    def blocks(cls, rows: int, cols: int, block_size: int | tuple[int, int]) -> "GroupPartition":
        """Tile a ``rows x cols`` matrix, flattened row-major, into blocks.

        Tiles are enumerated in row-major tile order. When the shape is not a
        multiple of the block size the edge tiles are ragged (smaller).
        """
        br, bc = (block_size, block_size) if np.isscalar(block_size) else block_size
        if br <= 0 or bc <= 0:
            raise ValueError("block size must be positive")
        flat = np.arange(rows * cols).reshape(rows, cols)
        groups = []
        for r0 in range(0, rows, br):
            for c0 in range(0, cols, bc):
                groups.append(tuple(flat[r0:r0 + br, c0:c0 + bc].ravel().tolist()))
        return cls(n=rows * cols, groups=tuple(groups))

    @classmethod
    def from_config(cls, spec, n: int | None = None) -> "GroupPartition":
        """Build from a list of index lists or ``{"block": {rows, cols, block_size}}``."""
        if isinstance(spec, dict):
            if "block" in spec:
                b = spec["block"]
                return cls.blocks(int(b["rows"]), int(b["cols"]), b["block_size"])
            if "sizes" in spec:
                return cls.contiguous([int(s) for s in spec["sizes"]])
            raise ValueError(f"unknown partition spec keys: {sorted(spec)}")
        return cls.from_lists(spec, n=n)

    def to_config(self) -> list[list[int]]:
        return [list(g) for g in self.groups]

    @property
    def t(self) -> int:
        return len(self.groups)

    @property
    def labels(self) -> np.ndarray:
        """Group index of every coordinate."""
        return self._labels

    def index(self, i: int) -> np.ndarray:
        return self._index[i]

    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups])

    def coords(self, S: Iterable[int]) -> np.ndarray:
        """Coordinates covered by the groups in ``S`` (sorted)."""
        S = list(S)
        if not S:
            return np.zeros(0, dtype=np.intp)
        return np.sort(np.concatenate([self._index[i] for i in S]))


def _check_len(partition: GroupPartition, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (partition.n,):
        raise ValueError(f"vector of shape {v.shape} does not match partition with n={partition.n}")
    return v


def group_norms(partition: GroupPartition, v) -> np.ndarray:
    """Euclidean norm of ``v`` restricted to each group."""
    v = _check_len(partition, v)
    sq = np.bincount(partition.labels, weights=v * v, minlength=partition.t)
    return np.sqrt(sq)


def group_sparsity(partition: GroupPartition, v, tol: float = DEFAULT_TOL) -> int:
    """Number of groups whose norm exceeds ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return int(np.count_nonzero(group_norms(partition, v) > tol))


def support(partition: GroupPartition, v, tol: float = DEFAULT_TOL) -> frozenset[int]:
    return frozenset(np.flatnonzero(group_norms(partition, v) > tol).tolist())


def top_k_groups(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties broken by lower index.

    Returned in increasing index order.
    """
    scores = np.asarray(scores, dtype=float)
    t = scores.shape[0]
    if k > t:
        raise ValueError("k exceeds group count")
    if k < 0:
        raise ValueError("k must be nonnegative")
    # stable sort on -score keeps lower indices first among equal scores
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def restrict(partition: GroupPartition, v, S: Iterable[int]) -> np.ndarray:
    """Copy of ``v`` zeroed outside the groups in ``S``."""
    v = _check_len(partition, v)
    S = list(S)
    for i in S:
        if not 0 <= i < partition.t:
            raise IndexError(f"group index {i} out of range [0, {partition.t})")
    out = np.zeros_like(v)
    idx = partition.coords(S)
    out[idx] = v[idx]
    return out
