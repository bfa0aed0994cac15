"""Block-partitioned vectors.

A flat float64 parameter (or gradient) vector is split into contiguous,
disjoint, covering blocks. Every optimizer in this package walks that block
structure: per-block norms, per-block trust scaling, per-block weight decay.

Blocks never alias each other, so per-block work may run concurrently as
long as writers hold different blocks; there is no internal locking.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def l2_norm(values: Iterable[float]) -> float:
    """Euclidean norm via plain left-to-right accumulation.

    Deliberately not BLAS-backed: summation order is pinned so results are
    reproducible regardless of backend threading or vectorization.
    """
    acc = 0.0
    for x in values:
        acc += x * x
    return math.sqrt(acc)


@dataclass(frozen=True)
class BlockLayout:
    """Partition of ``{0, ..., total_dim - 1}`` into contiguous blocks.

    ``sizes[b]`` is the length of block ``b``; blocks are laid out in order,
    so block ``b`` covers ``[offsets[b], offsets[b] + sizes[b])``.
    """

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValueError("layout must contain at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all block sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(
            self, "_offsets", tuple(itertools.accumulate((0,) + sizes[:-1]))
        )

    @property
    def num_blocks(self) -> int:
        return len(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return self._offsets  # type: ignore[attr-defined]

    @property
    def total_dim(self) -> int:
        return self.offsets[-1] + self.sizes[-1]

    def block_slice(self, b: int) -> slice:
        """Index window of block ``b``; raises IndexError when out of range."""
        if not 0 <= b < self.num_blocks:
            raise IndexError(f"block index {b} out of range for {self.num_blocks} blocks")
        start = self.offsets[b]
        return slice(start, start + self.sizes[b])

    def iter_slices(self) -> Iterable[slice]:
        for b in range(self.num_blocks):
            yield self.block_slice(b)


def partition(dims: Sequence[int]) -> BlockLayout:
    """Build a contiguous block layout from an ordered list of block sizes."""
    return BlockLayout(tuple(dims))


@dataclass
class BlockedVector:
    """A flat float64 vector paired with the layout that partitions it."""

    data: np.ndarray
    layout: BlockLayout

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 1:
            raise ValueError(f"expected a flat vector, got shape {data.shape}")
        if data.shape[0] != self.layout.total_dim:
            raise ValueError(
                f"vector length {data.shape[0]} does not match layout dimension "
                f"{self.layout.total_dim}"
            )
        self.data = data

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "BlockedVector":
        return cls(np.zeros(layout.total_dim), layout)

    def copy(self) -> "BlockedVector":
        return BlockedVector(self.data.copy(), self.layout)

    def block(self, b: int) -> np.ndarray:
        """Writable view of block ``b``."""
        return self.data[self.layout.block_slice(b)]


def view_block(v: BlockedVector, b: int) -> np.ndarray:
    """In-place read/write window over block ``b`` of ``v``.

    The returned array is a numpy view: writes through it land exactly on
    the indices of block ``b`` and nowhere else.
    """
    return v.block(b)


def block_norm(v: BlockedVector, b: int) -> float:
    """l2 norm of block ``b``; zero iff the block is all zeros."""
    return l2_norm(v.block(b))
