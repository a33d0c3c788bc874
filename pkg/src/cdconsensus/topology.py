"""Directed follower graph with leader pinning, and its M-matrix certificate.

Agents are numbered 1..N and the leader is agent 0.  ``a_ij = 1`` means agent
``i`` receives the output of agent ``j``; ``d_i = 1`` means agent ``i``
receives the leader's output.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import NotMMatrix


@dataclass(frozen=True)
class Topology:
    adjacency: np.ndarray
    leader_access: np.ndarray
    self_observe: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        d = np.array(self.leader_access, dtype=float).reshape(-1)
        if d.shape != (a.shape[0],) or not np.all((d == 0) | (d == 1)):
            raise ValueError("leader_access must be a 0/1 vector of length N")
        so = (np.ones(a.shape[0], dtype=bool) if self.self_observe is None
              else np.array(self.self_observe, dtype=bool).reshape(-1))
        if so.shape != d.shape:
            raise ValueError("self_observe must have length N")
        for arr in (a, d, so):
            arr.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "leader_access", d)
        object.__setattr__(self, "self_observe", so)

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, N: int, edges: Iterable[Tuple[int, int]],
                   pinned: Iterable[int], self_observe=None) -> "Topology":
        """Build from information-flow edges ``(j, i)``: agent ``i`` receives ``y_j``."""
        a = np.zeros((N, N))
        for j, i in edges:
            if not (1 <= i <= N and 1 <= j <= N):
                raise ValueError(f"edge {j}->{i} references an agent outside 1..{N}")
            if i == j:
                raise ValueError(f"self-loop {j}->{i} is not an edge")
            a[i - 1, j - 1] = 1.0
        d = np.zeros(N)
        for i in pinned:
            if not 1 <= i <= N:
                raise ValueError(f"pinned agent {i} outside 1..{N}")
            d[i - 1] = 1.0
        return cls(a, d, self_observe)

    def edges(self) -> List[Tuple[int, int]]:
        """Information-flow edges ``(j, i)`` between followers, sorted."""
        ii, jj = np.nonzero(self.adjacency)
        return sorted((int(j) + 1, int(i) + 1) for i, j in zip(ii, jj))

    def pinned(self) -> List[int]:
        return [int(i) + 1 for i in np.nonzero(self.leader_access)[0]]

    def nu(self, i: int, j: int) -> bool:
        """True iff agent ``i`` receives (or, for ``j == i``, samples) the output of ``j``."""
        if j == 0:
            return bool(self.leader_access[i - 1])
        if j == i:
            return bool(self.self_observe[i - 1])
        return bool(self.adjacency[i - 1, j - 1])

    def observed_pairs(self) -> List[Tuple[int, int]]:
        """All ``(i, j)`` with ``nu_ij = 1``, ordered by ``i`` then ``j``."""
        return [(i, j) for i in range(1, self.N + 1) for j in range(0, self.N + 1)
                if self.nu(i, j)]

    def to_dot(self) -> str:
        lines = ["digraph G {", "  0 [shape=doublecircle];"]
        for i in self.pinned():
            lines.append(f"  0 -> {i};")
        for j, i in self.edges():
            lines.append(f"  {j} -> {i};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def laplacian(top: Topology) -> np.ndarray:
    a = top.adjacency
    return np.diag(a.sum(axis=1)) - a


def h_matrix(top: Topology) -> np.ndarray:
    return laplacian(top) + np.diag(top.leader_access)


def has_directed_spanning_tree(top: Topology) -> bool:
    """Every follower is reachable from the leader in the augmented graph."""
    seen = {0}
    frontier = deque([0])
    while frontier:
        j = frontier.popleft()
        if j == 0:
            children = top.pinned()
        else:
            children = [int(i) + 1 for i in np.nonzero(top.adjacency[:, j - 1])[0]]
        for i in children:
            if i not in seen:
                seen.add(i)
                frontier.append(i)
    return len(seen) == top.N + 1


@dataclass(frozen=True)
class OmegaCertificate:
    omega: np.ndarray
    varrho: float
    omega_min: float
    omega_max: float
    h_max: float


def _sym_part(omega, H):
    W = np.diag(omega)
    return W @ H + H.T @ W


def _certificate(omega, H) -> OmegaCertificate:
    S = _sym_part(omega, H)
    return OmegaCertificate(
        omega=np.asarray(omega, dtype=float),
        varrho=float(np.linalg.eigvalsh(S)[0]),
        omega_min=float(np.min(omega)),
        omega_max=float(np.max(omega)),
        h_max=float(np.max(np.abs(H))),
    )


def is_m_matrix(H: np.ndarray) -> bool:
    """Z-matrix sign pattern and eigenvalues with positive real part."""
    H = np.asarray(H, dtype=float)
    off = H - np.diag(np.diag(H))
    if np.any(np.diag(H) <= 0) or np.any(off > 0):
        return False
    return bool(np.all(np.linalg.eigvals(H).real > 0))


def compute_omega(H: np.ndarray, top: Optional[Topology] = None) -> OmegaCertificate:
    """Positive diagonal ``Omega`` with ``Omega H + H^T Omega`` positive definite.

    The primary candidate solves ``H^T omega = 1``.  If numerical verification
    of positive definiteness fails, a search over ``log omega`` maximizing the
    smallest eigenvalue (normalized by ``omega_max``) takes over.
    """
    H = np.asarray(H, dtype=float)
    if top is not None and not has_directed_spanning_tree(top):
        raise NotMMatrix("leader does not root a directed spanning tree")
    if not is_m_matrix(H):
        raise NotMMatrix("H is not a nonsingular M-matrix")
    N = H.shape[0]
    omega = np.linalg.solve(H.T, np.ones(N))
    if np.all(omega > 0) and np.linalg.eigvalsh(_sym_part(omega, H))[0] > 0:
        return _certificate(omega, H)

    def neg_margin(logw):
        w = np.exp(logw - logw.max())
        return -np.linalg.eigvalsh(_sym_part(w, H))[0]

    start = np.log(np.clip(np.abs(omega), 1e-8, None))
    res = optimize.minimize(neg_margin, start, method="Nelder-Mead",
                            options=dict(maxiter=20000, xatol=1e-10, fatol=1e-14))
    w = np.exp(res.x - res.x.max())
    cert = _certificate(w, H)
    if cert.varrho <= 0:
        raise NotMMatrix("no positive diagonal certificate found")
    return cert


def ten_agent_topology() -> Topology:
    """Ten-agent benchmark graph used by the Chua scenarios; the leader pins agents 3 and 5."""
    edges = [(2, 1), (3, 2), (1, 3), (3, 4), (5, 4), (10, 4), (5, 6), (8, 6),
             (6, 7), (7, 8), (9, 8), (5, 9), (9, 10)]
    return Topology.from_edges(10, edges, pinned=[3, 5])


def two_follower_topology() -> Topology:
    """Two followers: the leader feeds agent 1, agent 1 feeds agent 2."""
    return Topology.from_edges(2, [(1, 2)], pinned=[1])


def random_pinned_digraph(N: int, rng: np.random.Generator, p: float = 0.3,
                          spanning: bool = True) -> Topology:
    """Random digraph; with ``spanning=True`` a random leader-rooted tree is embedded."""
    a = (rng.random((N, N)) < p).astype(float)
    np.fill_diagonal(a, 0.0)
    d = np.zeros(N)
    if spanning:
        order = rng.permutation(N) + 1
        d[order[0] - 1] = 1.0
        for k in range(1, N):
            parent = order[rng.integers(0, k)]
            a[order[k] - 1, parent - 1] = 1.0
        extra = rng.random(N) < 0.2
        d[extra] = 1.0
    return Topology(a, d)


def lemma_inequalities_hold(M: np.ndarray, x: np.ndarray, y: np.ndarray,
                            tol: float = 1e-9) -> Sequence[bool]:
    """Cauchy-Schwarz in the ``M`` metric and the Rayleigh bounds, for SPD ``M``."""
    ev = np.linalg.eigvalsh(M)
    xMx, yMy = x @ M @ x, y @ M @ y
    scale = 1.0 + abs(xMx) + abs(yMy)
    return (
        x @ M @ y <= np.sqrt(xMx) * np.sqrt(yMy) + tol * scale,
        ev[0] * (x @ x) <= xMx + tol * scale,
        xMx <= ev[-1] * (x @ x) + tol * scale,
    )
