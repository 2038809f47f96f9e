"""Named parameter collections shared by the attention policy and the edge network."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Iterator

import numpy as np

from .rng import Stream
from .taskgen import TSP
from .tensor import Tensor

ATTENTION = "attention"
EDGENET = "edgenet"


@dataclass(frozen=True)
class Architecture:
    """Model family and sizes.

    ``ff_dim`` defaults to ``2 * embed_dim``.  Only single-head attention is
    implemented.
    """

    kind: str = ATTENTION
    problem: str = TSP
    embed_dim: int = 32
    n_layers: int = 2
    ff_dim: int | None = None
    n_heads: int = 1
    clip: float = 10.0

    def __post_init__(self):
        if self.kind not in (ATTENTION, EDGENET):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_heads != 1:
            raise ValueError("only single-head attention is supported")

    @property
    def ff(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 2 * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


class ParameterSet:
    """Ordered name -> array map plus the architecture it belongs to."""

    def __init__(self, arrays: dict[str, np.ndarray], arch: Architecture):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.arch = arch

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.arrays.items()}, self.arch)

    def _check_compatible(self, other: "ParameterSet") -> None:
        if self.names() != other.names():
            raise ValueError("parameter sets have different names")
        for k, v in self.arrays.items():
            if v.shape != other.arrays[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {other.arrays[k].shape}")

    def combine(self, a: float, other: "ParameterSet", b: float) -> "ParameterSet":
        """Elementwise ``a * self + b * other``."""
        self._check_compatible(other)
        return ParameterSet({k: a * v + b * other.arrays[k] for k, v in self.arrays.items()}, self.arch)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParameterSet":
        return ParameterSet({k: fn(v) for k, v in self.arrays.items()}, self.arch)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.arrays.values()])

    def with_flat(self, vec: np.ndarray) -> "ParameterSet":
        out, i = {}, 0
        for k, v in self.arrays.items():
            out[k] = np.asarray(vec[i:i + v.size], dtype=np.float64).reshape(v.shape)
            i += v.size
        return ParameterSet(out, self.arch)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equals(self, other: "ParameterSet") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors (requiring grad) viewing copies of the arrays."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.arrays.items()}

    def zeros_like(self) -> "ParameterSet":
        return self.map(np.zeros_like)


def init_uniform(shapes: dict[str, tuple[int, ...]], arch: Architecture, seed: int | Stream) -> ParameterSet:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) for weights; layer-norm gains 1 and shifts 0."""
    rng = seed if isinstance(seed, Stream) else Stream(seed).spawn("init")
    bound = 1.0 / np.sqrt(arch.embed_dim)
    arrays = {}
    for name, shape in shapes.items():
        size = int(np.prod(shape)) if shape else 1
        if name.endswith(".ln_g"):
            arrays[name] = np.ones(shape)
        elif name.endswith(".ln_b"):
            arrays[name] = np.zeros(shape)
        else:
            u = rng.random_array(size)
            arrays[name] = ((2.0 * u - 1.0) * bound).reshape(shape)
    return ParameterSet(arrays, arch)
