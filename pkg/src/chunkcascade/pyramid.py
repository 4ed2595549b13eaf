"""Chunk-grid geometry of a multiresolution pyramid.

Level 0 is the finest level. Every level up halves the chunk count along each
axis, so a chunk at level ``k >= 1`` has exactly ``2**dim`` children at level
``k - 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class ChunkIndex(NamedTuple):
    level: int
    coords: tuple[int, ...]


@dataclass(frozen=True)
class PyramidSpec:
    """Geometry of the chunk grid.

    Parameters
    ----------
    dim : int
        Spatial dimension.
    levels : int
        Number of pyramid levels, level 0 included.
    l0_chunks_per_axis : sequence of int
        Chunk counts along each axis at level 0. Each must be divisible by
        ``2 ** (levels - 1)``; uneven grids are rejected, not padded.
    """

    dim: int
    levels: int
    l0_chunks_per_axis: tuple[int, ...]

    def __post_init__(self):
        axes = tuple(int(a) for a in self.l0_chunks_per_axis)
        object.__setattr__(self, "l0_chunks_per_axis", axes)
        if int(self.dim) < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if int(self.levels) < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(axes) != self.dim:
            raise ValueError(
                f"l0_chunks_per_axis has {len(axes)} entries, expected dim={self.dim}"
            )
        step = 2 ** (self.levels - 1)
        for i, a in enumerate(axes):
            if a < 1:
                raise ValueError(f"axis {i} has non-positive chunk count {a}")
            if a % step:
                raise ValueError(
                    f"axis {i} chunk count {a} is not divisible by 2**(levels-1)={step}"
                )

    @property
    def n(self) -> int:
        """Total number of level-0 chunks."""
        return chunk_count(self, 0)

    @property
    def branching(self) -> int:
        """Children per parent chunk, ``2**dim``."""
        return 2**self.dim

    @property
    def top(self) -> int:
        return self.levels - 1

    def shape(self, level: int) -> tuple[int, ...]:
        """Chunk counts per axis at ``level``."""
        _check_level(self, level)
        return tuple(a >> level for a in self.l0_chunks_per_axis)


def _check_level(spec: PyramidSpec, level: int) -> None:
    if not 0 <= level < spec.levels:
        raise ValueError(f"level {level} out of range [0, {spec.levels})")


def chunk_count(spec: PyramidSpec, level: int) -> int:
    return int(np.prod(spec.shape(level)))


def _check_index(spec: PyramidSpec, idx: ChunkIndex) -> None:
    shape = spec.shape(idx.level)
    if len(idx.coords) != spec.dim:
        raise ValueError(f"{idx} has {len(idx.coords)} coords, expected {spec.dim}")
    for c, s in zip(idx.coords, shape):
        if not 0 <= c < s:
            raise ValueError(f"{idx} lies outside level {idx.level} grid {shape}")


def children(spec: PyramidSpec, idx: ChunkIndex) -> set[ChunkIndex]:
    """The ``2**dim`` level ``idx.level - 1`` chunks tiling ``idx``."""
    _check_index(spec, idx)
    if idx.level == 0:
        raise ValueError("level-0 chunks have no children")
    return set(_iter_children(idx))


def _iter_children(idx: ChunkIndex) -> Iterator[ChunkIndex]:
    base = tuple(2 * c for c in idx.coords)
    for offs in itertools.product((0, 1), repeat=len(base)):
        yield ChunkIndex(idx.level - 1, tuple(b + o for b, o in zip(base, offs)))


def sorted_children(spec: PyramidSpec, idx: ChunkIndex) -> list[ChunkIndex]:
    """Children in ascending linearized order."""
    return sorted(children(spec, idx), key=lambda c: linear_index(spec, c))


def parent(spec: PyramidSpec, idx: ChunkIndex) -> ChunkIndex:
    _check_index(spec, idx)
    if idx.level >= spec.levels - 1:
        raise ValueError(f"{idx} is at the top level and has no parent")
    return ChunkIndex(idx.level + 1, tuple(c // 2 for c in idx.coords))


def linear_index(spec: PyramidSpec, idx: ChunkIndex) -> int:
    """Row-major position of ``idx`` within its level."""
    _check_index(spec, idx)
    return int(np.ravel_multi_index(idx.coords, spec.shape(idx.level)))


def from_linear(spec: PyramidSpec, level: int, position: int) -> ChunkIndex:
    coords = np.unravel_index(position, spec.shape(level))
    return ChunkIndex(level, tuple(int(c) for c in coords))


def iter_level(spec: PyramidSpec, level: int) -> Iterator[ChunkIndex]:
    """All chunks of ``level`` in ascending linearized order."""
    for coords in np.ndindex(*spec.shape(level)):
        yield ChunkIndex(level, tuple(int(c) for c in coords))


# Dense-array helpers. Grids carry any number of leading batch axes; the last
# ``dim`` axes are the chunk grid.


def reduce_any(grid: np.ndarray, dim: int) -> np.ndarray:
    """OR-reduce each ``2**dim`` block of children onto its parent."""
    grid = np.asarray(grid)
    lead = grid.shape[: grid.ndim - dim]
    split = []
    for s in grid.shape[grid.ndim - dim :]:
        split.extend((s // 2, 2))
    blocks = grid.reshape(lead + tuple(split))
    pair_axes = tuple(len(lead) + 2 * i + 1 for i in range(dim))
    return blocks.any(axis=pair_axes)


def expand_to_children(grid: np.ndarray, dim: int) -> np.ndarray:
    """Repeat every parent value onto its ``2**dim`` children."""
    out = np.asarray(grid)
    for ax in range(out.ndim - dim, out.ndim):
        out = np.repeat(out, 2, axis=ax)
    return out


def derived_labels(l0: np.ndarray, spec: PyramidSpec) -> list[np.ndarray]:
    """Occupancy labels per level: a chunk is positive iff any L0 descendant is."""
    out = [np.asarray(l0, dtype=bool)]
    for _ in range(1, spec.levels):
        out.append(reduce_any(out[-1], spec.dim))
    return out


def as_spec(value: PyramidSpec | dict | Sequence) -> PyramidSpec:
    if isinstance(value, PyramidSpec):
        return value
    if isinstance(value, dict):
        return PyramidSpec(value["dim"], value["levels"], tuple(value["l0_chunks_per_axis"]))
    raise TypeError(f"cannot build a PyramidSpec from {type(value).__name__}")
