"""Observer and controller gain synthesis for chain-of-integrator systems.

``P`` solves the linear equation ``P + P A + A^T P = C^T C`` and ``Q`` the
Riccati-type equation ``Q + Q A + A^T Q = Q B B^T Q``.  The resulting gains
``K_o = P^-1 C^T`` and ``K_c = B^T Q`` have closed forms in binomial
coefficients, which serve as an independent check of both solvers.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import linalg

from .errors import NoConvergence, SolveFailed
from .model import BlockStructure, ChainMatrices, build_chain_matrices


@dataclass(frozen=True)
class GainSet:
    P: np.ndarray
    Q: np.ndarray
    K_o: np.ndarray
    K_c: np.ndarray
    rho_min_P: float
    rho_max_P: float
    rho_min_Q: float
    rho_max_Q: float
    norm_K_o: float
    norm_K_c: float


@dataclass(frozen=True)
class ScalingMatrices:
    gamma_lambda: np.ndarray
    delta_theta: np.ndarray
    lam: float
    theta: float

    @property
    def xi(self) -> float:
        return self.theta / self.lam


def _sym_basis(n):
    for a in range(n):
        for b in range(a, n):
            E = np.zeros((n, n))
            E[a, b] = E[b, a] = 1.0
            yield a, b, E


def solve_p(bs: BlockStructure) -> np.ndarray:
    """Solve ``P + PA + A^T P = C^T C`` over symmetric ``P`` as a dense linear system."""
    cm = build_chain_matrices(bs)
    A, C = cm.A, cm.C
    n = bs.n
    iu = np.triu_indices(n)
    cols, index = [], []
    for a, b, E in _sym_basis(n):
        cols.append((E + E @ A + A.T @ E)[iu])
        index.append((a, b))
    M = np.column_stack(cols)
    rhs = (C.T @ C)[iu]
    if np.linalg.cond(M) > 1e13:
        raise SolveFailed("linear system for P is numerically singular")
    sol = np.linalg.solve(M, rhs)
    P = np.zeros((n, n))
    for (a, b), v in zip(index, sol):
        P[a, b] = P[b, a] = v
    return P


def _riccati_residual(Q, A, B):
    return Q + Q @ A + A.T @ Q - Q @ B @ B.T @ Q


def solve_q_scalar(q: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Newton-Kleinman iteration for the scalar-block (``m = 1``) Riccati equation.

    The equation reads ``As^T Q + Q As - Q B B^T Q = 0`` with ``As = A + I/2``,
    which is anti-stable.  The iteration starts from the stabilizing guess
    ``Q0 = S^-1`` where ``(As + I) S + S (As + I)^T = B B^T``.  (Starting at
    the identity converges to a singular positive semidefinite solution.)
    """
    A = np.eye(q, k=1)
    B = np.zeros((q, 1))
    B[-1, 0] = 1.0
    As = A + 0.5 * np.eye(q)
    S = linalg.solve_continuous_lyapunov(As + np.eye(q), B @ B.T)
    Q = np.linalg.inv(S)
    Q = 0.5 * (Q + Q.T)
    for _ in range(max_iter):
        Ak = As - B @ B.T @ Q
        F = _riccati_residual(Q, A, B)
        # Derivative of the residual at Q applied to X is Ak^T X + X Ak.
        X = linalg.solve_continuous_lyapunov(Ak.T, -F)
        X = 0.5 * (X + X.T)
        Q = Q + X
        if np.max(np.abs(X)) <= tol * max(1.0, np.max(np.abs(Q))):
            return Q
    raise NoConvergence(f"Riccati Newton iteration did not converge in {max_iter} steps")


def solve_q(bs: BlockStructure, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """``Q`` for the full block structure: the scalar-block solution Kronecker ``I_m``."""
    return np.kron(solve_q_scalar(bs.q, tol, max_iter), np.eye(bs.m))


def observer_gain(bs: BlockStructure) -> np.ndarray:
    """Binomial observer gain: block ``i`` is ``C(q, i) I_m``."""
    k = np.array([comb(bs.q, i) for i in range(1, bs.q + 1)], dtype=float)
    return np.kron(k[:, None], np.eye(bs.m))


def control_gain(bs: BlockStructure) -> np.ndarray:
    """Binomial control gain: block ``i`` is ``C(q, q - i + 1) I_m``."""
    k = np.array([comb(bs.q, bs.q - i + 1) for i in range(1, bs.q + 1)], dtype=float)
    return np.kron(k[None, :], np.eye(bs.m))


def synthesize(bs: BlockStructure) -> GainSet:
    cm = build_chain_matrices(bs)
    P = solve_p(bs)
    Q = solve_q(bs)
    K_o = np.linalg.solve(P, cm.C.T)
    K_c = cm.B.T @ Q
    evP = np.linalg.eigvalsh(P)
    evQ = np.linalg.eigvalsh(Q)
    if evP[0] <= 0 or evQ[0] <= 0:
        raise SolveFailed("gain matrices are not positive definite")
    return GainSet(P=P, Q=Q, K_o=K_o, K_c=K_c,
                   rho_min_P=float(evP[0]), rho_max_P=float(evP[-1]),
                   rho_min_Q=float(evQ[0]), rho_max_Q=float(evQ[-1]),
                   norm_K_o=float(np.linalg.norm(K_o, 2)),
                   norm_K_c=float(np.linalg.norm(K_c, 2)))


def residuals(bs: BlockStructure, gains: GainSet, cm: ChainMatrices | None = None):
    """Max-norm residuals of the P and Q equations and of the binomial closed forms."""
    cm = cm or build_chain_matrices(bs)
    A, B, C = cm.A, cm.B, cm.C
    P, Q = gains.P, gains.Q
    return dict(
        p_equation=float(np.max(np.abs(P + P @ A + A.T @ P - C.T @ C))),
        q_equation=float(np.max(np.abs(_riccati_residual(Q, A, B)))),
        k_o_binomial=float(np.max(np.abs(gains.K_o - observer_gain(bs)))),
        k_c_binomial=float(np.max(np.abs(gains.K_c - control_gain(bs)))),
    )


def scaling(lam: float, theta: float, bs: BlockStructure) -> ScalingMatrices:
    """Diagonal high-gain scalings ``Gamma_lambda`` and ``Delta_theta``."""
    if lam <= 0 or theta <= 0:
        raise ValueError("lambda and theta must be positive")
    q, m = bs.q, bs.m
    g = np.repeat([float(lam) ** (q - k) for k in range(q)], m)
    d = np.repeat([float(theta) ** (-k) for k in range(q)], m)
    return ScalingMatrices(gamma_lambda=np.diag(g), delta_theta=np.diag(d),
                           lam=float(lam), theta=float(theta))
