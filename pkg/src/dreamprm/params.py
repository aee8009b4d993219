"""Flat parameter vectors with named sub-blocks.

A ParamVector stores all trainable values of one object (a step scorer,
or a set of domain weights) as a single float64 array, together with a
block layout that maps names to logical shapes.  The flat form is what
optimizers and finite-difference checks operate on; the block views are
what forward passes consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BlockSpec:
    name: str
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


@dataclass
class ParamVector:
    """Float64 values plus a named block layout.

    Invariant: ``len(values) == sum(block sizes)`` and every entry is finite.
    """

    values: np.ndarray
    blocks: list[BlockSpec] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not self.blocks:
            self.blocks = [BlockSpec("values", (self.values.size,))]
        total = sum(b.size for b in self.blocks)
        if total != self.values.size:
            raise ValueError(
                f"block sizes sum to {total} but got {self.values.size} values"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ParamVector entries must be finite")

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.blocks))

    def block(self, name: str) -> np.ndarray:
        """View of one named block, reshaped to its logical shape."""
        offset = 0
        for b in self.blocks:
            if b.name == name:
                return self.values[offset : offset + b.size].reshape(b.shape)
            offset += b.size
        raise KeyError(name)

    def block_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        offset = 0
        for b in self.blocks:
            out.append((b.name, self.values[offset : offset + b.size].reshape(b.shape)))
            offset += b.size
        return out

    @classmethod
    def from_blocks(cls, named_arrays: list[tuple[str, np.ndarray]]) -> "ParamVector":
        blocks = [BlockSpec(n, np.asarray(a).shape) for n, a in named_arrays]
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in named_arrays])
        return cls(values, blocks)

    def like(self, values: np.ndarray) -> "ParamVector":
        """New vector with the same layout and the given flat values."""
        return ParamVector(np.asarray(values, dtype=np.float64).copy(), list(self.blocks))

    @classmethod
    def zeros_like(cls, other: "ParamVector") -> "ParamVector":
        return cls(np.zeros(len(other)), list(other.blocks))
