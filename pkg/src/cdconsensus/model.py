"""Agent dynamics: chain-of-integrator block systems with a triangular nonlinearity.

Every agent (and the leader, agent 0) follows

    x' = A x + phi(t, x) + B u + eps(t),    y = C x + w

where the state is split into ``q`` blocks of size ``m``.  The Chua-type
oscillator field lives here as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionError

FieldFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BlockStructure:
    q: int
    m: int

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ValueError(f"q must be a positive integer, got {self.q!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")

    @property
    def n(self) -> int:
        return self.q * self.m

    def block(self, x: np.ndarray, k: int) -> np.ndarray:
        """Return block ``k`` (1-based) of ``x`` along its last axis."""
        if not 1 <= k <= self.q:
            raise IndexError(f"block index {k} outside 1..{self.q}")
        return x[..., (k - 1) * self.m:k * self.m]


@dataclass(frozen=True)
class ChainMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    structure: BlockStructure


def build_chain_matrices(bs: BlockStructure) -> ChainMatrices:
    """Block shift ``A``, last-block input ``B`` and first-block output ``C``."""
    q, m, n = bs.q, bs.m, bs.n
    A = np.kron(np.eye(q, k=1), np.eye(m))
    B = np.zeros((n, m))
    B[n - m:, :] = np.eye(m)
    C = np.zeros((m, n))
    C[:, :m] = np.eye(m)
    for M in (A, B, C):
        M.setflags(write=False)
    return ChainMatrices(A=A, B=B, C=C, structure=bs)


@dataclass(frozen=True)
class NonlinearField:
    """A nonlinearity ``phi(t, x)`` with its declared global Lipschitz constant.

    ``eval`` must accept ``x`` with shape ``(n,)`` or ``(k, n)`` and act row-wise;
    the simulator evaluates every agent and observer in a single call.
    """

    eval: FieldFn
    lipschitz: float
    n: int
    triangular: bool = True
    name: str = "user"

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.eval(t, x)


def zero_field(n: int) -> NonlinearField:
    return NonlinearField(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                          lipschitz=0.0, n=n, name="zero")


@dataclass(frozen=True)
class NoiseModel:
    """Output noise added to each transmitted sample.

    kind is one of ``"none"``, ``"bounded"`` (uniform in a box whose corners
    have norm ``level``) or ``"gaussian"`` (``level`` is the per-component
    standard deviation).
    """

    kind: str = "none"
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "bounded", "gaussian"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        if self.kind == "none" or self.level == 0.0:
            return np.zeros(m)
        if self.kind == "gaussian":
            return rng.normal(0.0, self.level, size=m)
        half = self.level / np.sqrt(m)
        return rng.uniform(-half, half, size=m)

    @property
    def bound(self) -> float:
        """Sup-norm bound on ``w`` (``inf`` for Gaussian noise)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian":
            return float("inf") if self.level > 0 else 0.0
        return self.level


@dataclass(frozen=True)
class DisturbanceSpec:
    """Dynamics uncertainty per agent (0 = leader) and the output noise model.

    ``epsilon`` maps an agent id to a function ``t -> R^n``; absent agents are
    undisturbed.  ``epsilon_bounds`` holds the declared per-block sup norms.
    """

    epsilon: Mapping[int, Callable[[float], np.ndarray]] = field(default_factory=dict)
    epsilon_bounds: Optional[Sequence[float]] = None
    noise: NoiseModel = NoiseModel()

    def eps(self, agent: int, t: float, n: int) -> np.ndarray:
        fn = self.epsilon.get(agent)
        if fn is None:
            return np.zeros(n)
        return np.asarray(fn(t), dtype=float)

    def block_bounds(self, q: int) -> np.ndarray:
        if self.epsilon_bounds is None:
            return np.zeros(q)
        b = np.asarray(self.epsilon_bounds, dtype=float)
        if b.shape != (q,):
            raise DimensionError(f"epsilon_bounds must have {q} entries, got {b.shape}")
        return b


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("agent state has non-finite entries")


def eval_dynamics(cm: ChainMatrices, phi: NonlinearField, t: float, x: np.ndarray,
                  u: Optional[np.ndarray] = None,
                  eps: Optional[np.ndarray] = None) -> np.ndarray:
    """Right-hand side ``A x + phi(t, x) + B u + eps``; ``u=None`` is the leader."""
    x = np.asarray(x, dtype=float)
    n, m = cm.B.shape
    if x.shape != (n,):
        raise DimensionError(f"state must have shape ({n},), got {x.shape}")
    dx = cm.A @ x + phi(t, x)
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (m,):
            raise DimensionError(f"input must have shape ({m},), got {u.shape}")
        dx = dx + cm.B @ u
    if eps is not None:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (n,):
            raise DimensionError(f"uncertainty must have shape ({n},), got {eps.shape}")
        dx = dx + eps
    return dx


# Chua-type oscillator used for every agent in the Chua scenarios.
CHUA = dict(alpha=10.0, beta=19.53, gamma=0.1636, eps=0.2, omega=0.5,
            a=-1.4325, b=-0.7831)


_ALPHA, _BETA, _GAMMA = CHUA["alpha"], CHUA["beta"], CHUA["gamma"]
_HALF_AB = 0.5 * (CHUA["a"] - CHUA["b"])
_BETA_EPS, _OMEGA = CHUA["beta"] * CHUA["eps"], CHUA["omega"]


def chua_h(s):
    """Piecewise-linear characteristic ``(a-b)/2 (|s+1| - |s-1|)``."""
    s = np.asarray(s, dtype=float)
    return _HALF_AB * (np.abs(s + 1.0) - np.abs(s - 1.0))


def chua_f(t, pos, vel):
    """Second-block drift ``f(t, x1, x2)``; acts on the last axis (size 3)."""
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    out = np.empty(np.broadcast(pos, vel).shape)
    _chua_into(out, pos[..., 0], vel[..., 0], vel[..., 1], vel[..., 2])
    return out


def _chua_into(out, p1, v1, v2, v3):
    out[..., 0] = _ALPHA * (v2 - v1 - _HALF_AB * (np.abs(v1 + 1.0) - np.abs(v1 - 1.0)))
    out[..., 1] = v1 - v2 + v3
    out[..., 2] = -_BETA * v2 - _GAMMA * v3 - _BETA_EPS * np.sin(_OMEGA * p1)


def chua_field(t, x):
    """Full 6-dimensional nonlinearity: zero first block, ``f`` in the second."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    _chua_into(out[..., 3:6], x[..., 0], x[..., 3], x[..., 4], x[..., 5])
    return out


# Supremum of the Jacobian spectral norm over both linear regions of h and all
# values of cos(omega x1) is 22.6102; rounded up.
CHUA_LIPSCHITZ = 22.62


def chua_nonlinear_field(lipschitz: float = CHUA_LIPSCHITZ) -> NonlinearField:
    return NonlinearField(chua_field, lipschitz=lipschitz, n=6, name="chua")


def leader_cosine_uncertainty(t: float) -> np.ndarray:
    """Leader uncertainty on the velocity block: ``(cos t, cos 2t, cos 3t)``."""
    return np.array([0.0, 0.0, 0.0, np.cos(t), np.cos(2.0 * t), np.cos(3.0 * t)])


def estimate_lipschitz(phi, box, samples: int = 2000, seed: int = 0,
                       t: float = 0.0) -> float:
    """Lower estimate of the Lipschitz constant of ``phi`` over ``box``.

    Returns the largest ratio ``|phi(x1) - phi(x2)| / |x1 - x2|`` over random
    pairs drawn in the box plus, for a subset of base points, pairs aligned
    with the dominant right singular vector of a finite-difference Jacobian.
    ``box`` is a ``(lower, upper)`` pair of arrays.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    fn = phi.eval if isinstance(phi, NonlinearField) else phi
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    lo, hi = np.broadcast_arrays(lo, hi)
    width = hi - lo
    if np.any(width < 0):
        raise ValueError("box lower corner exceeds upper corner")
    diam = float(np.linalg.norm(width))
    if diam == 0.0:
        raise ValueError("box has zero diameter")
    n = lo.size
    rng = np.random.default_rng(seed)

    def ratios(x1, x2):
        dx = np.linalg.norm(x1 - x2, axis=-1)
        keep = dx > 0
        df = np.linalg.norm(fn(t, x1[keep]) - fn(t, x2[keep]), axis=-1)
        return df / dx[keep]

    x1 = rng.uniform(lo, hi, size=(samples, n))
    x2 = rng.uniform(lo, hi, size=(samples, n))
    best = float(np.max(ratios(x1, x2), initial=0.0))

    # Jacobian-aligned pairs: finite differences find the stretching direction.
    h = 1e-6 * diam
    r = 1e-3 * diam
    eye = np.eye(n)
    for x in x1[:min(samples, 256)]:
        f0 = fn(t, x)
        jac = np.stack([(fn(t, x + h * eye[k]) - f0) / h for k in range(n)], axis=1)
        _, _, vt = np.linalg.svd(jac)
        v = vt[0]
        for cand in (x + r * v, x - r * v):
            if np.all(cand >= lo) and np.all(cand <= hi):
                best = max(best, float(ratios(x[None], cand[None])[0]))
                break
    return best
