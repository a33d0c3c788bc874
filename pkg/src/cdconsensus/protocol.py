"""Continuous-discrete observers and the distributed control law.

Each agent ``i`` runs one observer per observed agent ``j`` (itself, its
in-neighbours and, when pinned, the leader).  Between samples the observer
integrates the model plus a correction driven by ``z``, the exponentially
decaying prediction of the last sampled output error.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .bounds import TuningParams
from .errors import MissingEstimate, OutOfOrderSample
from .gains import GainSet, ScalingMatrices
from .model import ChainMatrices, NonlinearField
from .topology import Topology


@dataclass(frozen=True)
class ObserverState:
    """Observer of agent ``j`` run by agent ``i``.

    ``t_anchor`` is ``None`` until the first sample arrives; until then the
    correction is zero.
    """

    i: int
    j: int
    x_hat: np.ndarray
    t_anchor: Optional[float]
    e_anchor: np.ndarray

    @classmethod
    def initial(cls, i: int, j: int, x_hat: np.ndarray, m: int) -> "ObserverState":
        return cls(i, j, np.asarray(x_hat, dtype=float).copy(), None, np.zeros(m))


@dataclass(frozen=True)
class ProtocolConfig:
    tuning: TuningParams
    gains: GainSet
    scaling: ScalingMatrices
    topology: Topology


def decay_factor(t, t_anchor, theta: float, q: int):
    """``exp(-theta q (t - t_anchor))``; the leading observer gain ``C(q, 1)`` is ``q``."""
    return np.exp(-theta * q * (np.asarray(t) - np.asarray(t_anchor)))


def z_value(obs: ObserverState, theta: float, q: int, t: float) -> np.ndarray:
    if obs.t_anchor is None:
        return np.zeros_like(obs.e_anchor)
    if t < obs.t_anchor:
        raise ValueError(f"t={t} precedes the sample anchor {obs.t_anchor}")
    return decay_factor(t, obs.t_anchor, theta, q) * obs.e_anchor


def correction_matrix(theta: float, delta_theta: np.ndarray, K_o: np.ndarray) -> np.ndarray:
    """``theta Delta_theta^-1 K_o``, mapping ``z`` to the state correction."""
    return theta * np.diag(1.0 / np.diag(delta_theta)) @ K_o


def observer_derivative(obs: ObserverState, cm: ChainMatrices, phi: NonlinearField,
                        theta: float, delta_theta: np.ndarray, K_o: np.ndarray,
                        t: float) -> np.ndarray:
    """Observer right-hand side.  No input term: inputs are never transmitted."""
    z = z_value(obs, theta, cm.structure.q, t)
    return cm.A @ obs.x_hat + phi(t, obs.x_hat) - correction_matrix(theta, delta_theta, K_o) @ z


def on_sample(obs: ObserverState, t_k: float, y_received: np.ndarray) -> ObserverState:
    """Re-anchor the output-error prediction; the estimate itself does not jump."""
    if obs.t_anchor is not None and t_k < obs.t_anchor:
        raise OutOfOrderSample(f"sample at {t_k} precedes anchor {obs.t_anchor} "
                               f"on edge ({obs.i},{obs.j})")
    y = np.asarray(y_received, dtype=float)
    m = y.shape[0]
    return replace(obs, t_anchor=float(t_k), e_anchor=obs.x_hat[:m] - y)


def control_input(i: int, config: ProtocolConfig,
                  estimates: Mapping[int, ObserverState], t: float = 0.0) -> np.ndarray:
    """Distributed control of agent ``i`` from its own bank of estimates (keyed by ``j``)."""
    top = config.topology
    gain = config.tuning.c_bar * config.gains.K_c @ config.scaling.gamma_lambda
    if i not in estimates:
        raise MissingEstimate(f"agent {i} has no estimate of itself")
    own = estimates[i].x_hat
    acc = np.zeros_like(own)
    if top.leader_access[i - 1]:
        if 0 not in estimates:
            raise MissingEstimate(f"agent {i} is pinned but has no leader estimate")
        acc += estimates[0].x_hat - own
    for j in np.nonzero(top.adjacency[i - 1])[0] + 1:
        if int(j) not in estimates:
            raise MissingEstimate(f"agent {i} has no estimate of neighbour {j}")
        acc += top.adjacency[i - 1, j - 1] * (estimates[int(j)].x_hat - own)
    return gain @ acc
