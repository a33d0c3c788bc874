"""Sufficient tuning conditions, the consensus-error envelope and the delay decay bound."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import DeltaTooLarge, InvalidCertificate
from .gains import GainSet
from .model import BlockStructure, DisturbanceSpec
from .topology import OmegaCertificate

log = logging.getLogger(__name__)

SQRT2M1 = np.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class TuningParams:
    c_bar: float
    lam: float
    theta: float
    tau_m: float
    tau_M: float

    def __post_init__(self):
        if self.lam <= 0 or self.theta <= 0 or self.c_bar < 0:
            raise ValueError("need lambda, theta > 0 and c_bar >= 0")
        if not 0 < self.tau_m < self.tau_M:
            raise ValueError(f"need 0 < tau_m < tau_M, got {self.tau_m}, {self.tau_M}")

    @property
    def xi(self) -> float:
        return self.theta / self.lam

    @property
    def applicable(self) -> bool:
        return min(self.c_bar, self.lam, self.theta) >= 1.0 and self.theta >= self.lam


@dataclass(frozen=True)
class InitialErrors:
    """Initial tracking errors per follower and initial estimation errors per observed pair.

    Only pairs with ``nu_ij = 1`` carry an observer, so only those enter.
    """

    tracking: Sequence[float] = ()
    estimation: Sequence[float] = ()

    @classmethod
    def from_states(cls, x0: np.ndarray, xhat0: Dict[tuple, np.ndarray]) -> "InitialErrors":
        """``x0`` has shape ``(N + 1, n)`` with the leader in row 0."""
        track = [float(np.linalg.norm(x0[i] - x0[0])) for i in range(1, x0.shape[0])]
        est = [float(np.linalg.norm(xh - x0[j])) for (i, j), xh in sorted(xhat0.items())]
        return cls(tuple(track), tuple(est))


@dataclass(frozen=True)
class BoundReport:
    c_star: float
    lambda_star: float
    xi_star: float
    theta_min: float
    sigma_star: float
    tau_M_max: float
    chi1: float
    chi2: float
    chi3: float
    rho_m_Qw: float
    rho_M_Qw: float
    satisfied: Dict[str, bool]
    q: int
    params: TuningParams
    delta_w: float
    delta_eps: np.ndarray = field(repr=False)
    lipschitz: float = 0.0

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())

    @property
    def decay_rate(self) -> float:
        return self.params.lam / 8.0

    def steady_state(self) -> float:
        p, q = self.params, self.q
        noise = self.chi2 / p.lam * p.theta ** q * (self.delta_w + p.tau_M * self.delta_eps[0])
        unc = self.chi3 / p.lam * sum(p.theta ** (q - k) * self.delta_eps[k - 1]
                                      for k in range(1, q + 1))
        return float(noise + unc)

    def envelope(self, t):
        """Upper bound on every ``|x_i(t) - x_0(t)|``."""
        t = np.asarray(t, dtype=float)
        p = self.params
        transient = self.chi1 * p.theta ** (self.q - 1) * np.exp(-p.lam * t / 8.0)
        return transient + self.steady_state()

    def as_dict(self) -> Dict[str, float]:
        out = {k: getattr(self, k) for k in (
            "c_star", "lambda_star", "xi_star", "theta_min", "sigma_star", "tau_M_max",
            "chi1", "chi2", "chi3", "rho_m_Qw", "rho_M_Qw")}
        out["steady_state"] = self.steady_state()
        out["decay_rate"] = self.decay_rate
        for k, v in self.satisfied.items():
            out[f"ok_{k}"] = v
        return out


def theorem_bounds(cert: OmegaCertificate, gains: GainSet, bs: BlockStructure,
                   lipschitz: float, params: TuningParams,
                   disturbances: Optional[DisturbanceSpec] = None,
                   initial_errors: Optional[InitialErrors] = None,
                   delta_w: Optional[float] = None, warn: bool = True) -> BoundReport:
    """Evaluate the sufficient conditions and the error envelope for one configuration.

    ``delta_w`` overrides the noise bound taken from ``disturbances`` (Gaussian
    noise has no finite bound, which makes the envelope infinite).
    """
    if not cert.varrho > 0:
        raise InvalidCertificate(f"certificate has varrho = {cert.varrho} <= 0")
    disturbances = disturbances or DisturbanceSpec()
    initial_errors = initial_errors or InitialErrors()
    N = len(cert.omega)
    n = bs.n
    rmP, rMP = gains.rho_min_P, gains.rho_max_P
    rmQw = cert.omega_min * gains.rho_min_Q
    rMQw = cert.omega_max * gains.rho_max_Q
    hmax = cert.h_max

    c_star = max(cert.omega_max / cert.varrho, 1.0)
    lambda_star = 24.0 * lipschitz * np.sqrt(n) * max(np.sqrt(rMQw / rmQw), np.sqrt(rMP / rmP))
    xi_star = (36.0 * gains.norm_K_c ** 2 * (N + 1) ** 3 * hmax ** 2
               * max(np.sqrt(rMP / rmP), rMP / rmQw, rMQw / rmP))
    sigma_star = ((SQRT2M1 / 8.0) * min(np.sqrt(cert.omega_min), np.sqrt(rmP))
                  / (gains.norm_K_o * (N + 1) ** 1.5 * hmax * np.sqrt(rMP)))
    p = params
    theta_min = p.lam * p.c_bar ** 2 * xi_star
    tau_M_max = sigma_star / (p.c_bar * (p.theta + lipschitz)) if p.c_bar > 0 else float("inf")

    chi1 = (np.sqrt(rMQw / rmQw) * float(np.sum(initial_errors.tracking))
            + np.sqrt(rMP) / np.sqrt(rmQw) * float(np.sum(initial_errors.estimation)))
    chi2 = 8.0 * np.sqrt(rMP) * (N + 1) * gains.norm_K_o / np.sqrt(rmQw)
    chi3 = 8.0 * (2 * N * np.sqrt(rMQw) + (N + 1) * np.sqrt(rMP)) / np.sqrt(rmQw)

    satisfied = {
        "tuning_ge_one": bool(min(p.c_bar, p.lam, p.theta) >= 1.0),
        "c_bar": bool(p.c_bar >= c_star),
        "lambda": bool(p.lam >= lambda_star),
        "theta": bool(p.theta >= theta_min),
        "tau_M": bool(p.tau_M < tau_M_max),
    }
    dw = disturbances.noise.bound if delta_w is None else float(delta_w)
    report = BoundReport(
        c_star=float(c_star), lambda_star=float(lambda_star), xi_star=float(xi_star),
        theta_min=float(theta_min), sigma_star=float(sigma_star), tau_M_max=float(tau_M_max),
        chi1=float(chi1), chi2=float(chi2), chi3=float(chi3),
        rho_m_Qw=float(rmQw), rho_M_Qw=float(rMQw), satisfied=satisfied, q=bs.q,
        params=params, delta_w=dw, delta_eps=disturbances.block_bounds(bs.q),
        lipschitz=float(lipschitz))
    for k, ok in satisfied.items():
        if warn and not ok:
            log.warning("sufficient condition %s not satisfied", k)
    return report


def certified_params(cert: OmegaCertificate, gains: GainSet, bs: BlockStructure,
                     lipschitz: float, lam: Optional[float] = None,
                     tau_fraction: float = 0.5, tau_ratio: float = 0.9) -> TuningParams:
    """Smallest tuning meeting every sufficient condition, with ``tau_M`` a fraction of its bound."""
    probe = theorem_bounds(cert, gains, bs, lipschitz,
                           TuningParams(1.0, 1.0, 1.0, 0.5, 1.0), warn=False)
    c_bar = probe.c_star
    lam = max(probe.lambda_star, 1.0) if lam is None else max(lam, probe.lambda_star, 1.0)
    theta = max(lam * c_bar ** 2 * probe.xi_star, lam, 1.0)
    tau_max = probe.sigma_star / (c_bar * (theta + lipschitz))
    tau_M = tau_fraction * tau_max
    return TuningParams(c_bar=c_bar, lam=lam, theta=theta, tau_m=tau_ratio * tau_M, tau_M=tau_M)


def check_monotonicity(cert: OmegaCertificate, gains: GainSet, bs: BlockStructure,
                       lipschitz: float, params: TuningParams,
                       disturbances: Optional[DisturbanceSpec] = None,
                       factors: Sequence[float] = (1.0, 1.5, 2.0, 4.0)) -> Dict[str, bool]:
    """Sweep each tuning knob by ``factors`` and check the expected monotone trends."""
    def report(p=params, L=lipschitz):
        return theorem_bounds(cert, gains, bs, L, p, disturbances, warn=False)

    def strictly_decreasing(vals):
        return bool(np.all(np.diff(vals) < 0))

    tau_theta = [report(replace(params, theta=params.theta * f)).tau_M_max for f in factors]
    tau_cbar = [report(replace(params, c_bar=params.c_bar * f)).tau_M_max for f in factors]
    tau_L = [report(L=max(lipschitz, 1.0) * f).tau_M_max for f in factors]
    steady_lam = [report(replace(params, lam=params.lam * f)).steady_state() for f in factors]
    base, doubled_c = tau_cbar[0], report(replace(params, c_bar=2 * params.c_bar)).tau_M_max
    rate = report().decay_rate
    rate2 = report(replace(params, lam=2 * params.lam, theta=2 * params.theta)).decay_rate
    return {
        "tau_decreasing_in_theta": strictly_decreasing(tau_theta),
        "tau_decreasing_in_c_bar": strictly_decreasing(tau_cbar),
        "tau_decreasing_in_lipschitz": strictly_decreasing(tau_L),
        "tau_halves_when_c_bar_doubles": bool(np.isclose(doubled_c, base / 2, rtol=1e-12)),
        "steady_state_nonincreasing_in_lambda": bool(np.all(np.diff(steady_lam) <= 0)),
        "rate_doubles_with_lambda": bool(np.isclose(rate2, 2 * rate, rtol=1e-12)),
    }


@dataclass(frozen=True)
class Lemma2Params:
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    delta: float
    k: float
    v0: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "a", "b", "v0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        if not (self.gamma.shape == self.a.shape == self.b.shape == self.v0.shape):
            raise ValueError("gamma, a, b and v0 must have the same length")
        if np.any(self.gamma <= 0) or np.any(self.a <= 0) or np.any(self.b < 0):
            raise ValueError("need gamma_i > 0, a_i > 0, b_i >= 0")
        if self.delta <= 0 or self.k < 0:
            raise ValueError("need delta > 0 and k >= 0")

    @property
    def delta_max(self) -> float:
        """Admissible delays are strictly below this value; ``b_i = 0`` terms drop out."""
        pos = self.b > 0
        first = (SQRT2M1 / 2.0 * np.min(self.a[pos] / self.b[pos])) if np.any(pos) else np.inf
        second = np.min(self.gamma / self.a) / np.sqrt(2.0)
        return float(min(first, second))

    @property
    def rate(self) -> float:
        return float(0.5 * np.min(self.a / self.gamma))

    @property
    def initial_value(self) -> float:
        return float(np.sum(self.gamma * self.v0 ** 2))


def lemma2_bound(p: Lemma2Params, t):
    """``varsigma exp(-vartheta t) + k / vartheta`` for admissible delay."""
    if not p.delta < p.delta_max:
        raise DeltaTooLarge(f"delay {p.delta} must be below {p.delta_max}")
    t = np.asarray(t, dtype=float)
    return p.initial_value * np.exp(-p.rate * t) + p.k / p.rate
