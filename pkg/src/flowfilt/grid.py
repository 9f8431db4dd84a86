"""Pseudo-time discretization for the flow integrators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("euler_maruyama", "rk4")


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly increasing lam nodes spanning [0, 1] plus an integration scheme.

    ``euler_maruyama`` is the only scheme that supports nonzero diffusion;
    ``rk4`` is reserved for flows whose diffusion vanishes identically.
    """

    nodes: np.ndarray
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("grid must start at 0.0 and end at 1.0 exactly")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        nodes = np.ascontiguousarray(nodes)
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, steps: int, scheme: str = "euler_maruyama") -> "LambdaGrid":
        steps = int(steps)
        if steps < 1:
            raise ValueError(f"steps must be positive, got {steps}")
        return cls(np.linspace(0.0, 1.0, steps + 1), scheme)

    @property
    def steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dlam(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])
