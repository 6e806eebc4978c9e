"""Directed communication topology and Laplacian checks.

Agents are 0-indexed with agent 0 the leader. ``neighbors[i]`` lists the
agents that ``i`` receives from.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Topology:
    agent_count: int
    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.neighbors) != self.agent_count:
            raise ValueError(
                f"need one neighbor list per agent: {len(self.neighbors)} lists for {self.agent_count} agents"
            )
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if not 0 <= j < self.agent_count:
                    raise ValueError(f"agent {i} has out-of-range neighbor {j}")
                if j == i:
                    raise ValueError(f"agent {i} lists itself as a neighbor")

    @classmethod
    def from_lists(cls, neighbors) -> Topology:
        return cls(len(neighbors), tuple(tuple(int(j) for j in n) for n in neighbors))

    @property
    def follower_count(self) -> int:
        return self.agent_count - 1


def path_graph(K: int) -> Topology:
    """Leader 0 followed by a chain 1..K; each follower hears both chain neighbors."""
    if K < 1:
        raise ValueError(f"a platoon needs at least one follower, got K={K}")
    neighbors = [()]
    for i in range(1, K):
        neighbors.append((i - 1, i + 1))
    neighbors.append((K - 1,))
    return Topology(K + 1, tuple(neighbors))


def adjacency(topology: Topology) -> np.ndarray:
    n = topology.agent_count
    A = np.zeros((n, n))
    for i, nbrs in enumerate(topology.neighbors):
        for j in nbrs:
            A[i, j] = 1.0
    return A


def laplacian(topology: Topology) -> np.ndarray:
    """In-degree Laplacian ``D - A`` with ``A[i, j] = 1`` iff i receives from j."""
    A = adjacency(topology)
    return np.diag(A.sum(axis=1)) - A


def numerical_rank(L: np.ndarray, rtol: float = 1e-9) -> int:
    s = np.linalg.svd(np.asarray(L, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def has_rooted_out_branching(L: np.ndarray) -> bool:
    """True iff the graph behind ``L`` contains a rooted out-branching (rank K)."""
    L = np.asarray(L, dtype=float)
    return numerical_rank(L) == L.shape[0] - 1


def local_consensus_errors(predictions, topology: Topology) -> np.ndarray:
    """Per-follower norm of the summed disagreement with its neighbors.

    Returns an array of length ``agent_count - 1``; entry ``i - 1`` belongs
    to follower ``i``.
    """
    Y = np.asarray(predictions, dtype=float)
    if Y.shape[0] != topology.agent_count:
        raise ValueError(f"expected {topology.agent_count} predictions, got {Y.shape[0]}")
    errs = np.empty(topology.agent_count - 1)
    for i in range(1, topology.agent_count):
        total = np.zeros(Y.shape[1])
        for j in topology.neighbors[i]:
            total += Y[i] - Y[j]
        errs[i - 1] = np.linalg.norm(total)
    return errs
