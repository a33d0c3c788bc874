"""Event-driven fixed-step simulation of the leader, the followers and every observer.

The integration grid is a regular grid of step ``dt`` merged with every
sampling instant, so each sample is applied exactly at its own time.  All
true states and observer estimates are stacked in one array and advanced
together with classical RK4; the control input is recomputed at every stage
from the current estimates.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bounds import TuningParams
from .errors import ConfigInvalid, MissingEstimate, NumericalBlowup
from .gains import GainSet, ScalingMatrices, scaling, synthesize
from .model import BlockStructure, DisturbanceSpec, NonlinearField, build_chain_matrices
from .protocol import correction_matrix, decay_factor
from .topology import Topology, has_directed_spanning_tree

log = logging.getLogger(__name__)

Pair = Tuple[int, int]


def generate_schedules(topology: Topology, tau_m: float, tau_M: float, horizon: float,
                       seed: int) -> Dict[Pair, np.ndarray]:
    """Independent sampling instants for every observed pair ``(i, j)``.

    The first instant is uniform in ``(0, tau_M)`` and each gap uniform in
    ``(tau_m, tau_M)``.  Every pair draws from its own stream derived from
    ``(seed, i, j)``, so adding an edge never perturbs the others.
    """
    if not 0 < tau_m < tau_M:
        raise ConfigInvalid(f"need 0 < tau_m < tau_M, got {tau_m}, {tau_M}")
    out = {}
    for i, j in topology.observed_pairs():
        rng = np.random.default_rng([int(seed), 0x5A, i, j])
        n_max = int(np.ceil(horizon / tau_m)) + 2
        first = rng.uniform(0.0, tau_M)
        gaps = rng.uniform(tau_m, tau_M, size=n_max)
        # uniform() is half-open; the lower end is excluded by resampling.
        while np.any(gaps <= tau_m) or first <= 0.0:
            bad = gaps <= tau_m
            gaps[bad] = rng.uniform(tau_m, tau_M, size=int(bad.sum()))
            if first <= 0.0:
                first = rng.uniform(0.0, tau_M)
        t = first + np.concatenate(([0.0], np.cumsum(gaps)))
        out[(i, j)] = t[t <= horizon]
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    structure: BlockStructure
    phi: NonlinearField
    topology: Topology
    tuning: TuningParams
    disturbances: DisturbanceSpec
    x0: np.ndarray
    xhat0: Optional[Dict[Pair, np.ndarray]] = None
    horizon: float = 30.0
    dt: float = 1e-3
    seed: int = 0
    record_dt: float = 0.01
    blowup_guard: float = 1e9
    name: str = "scenario"
    lipschitz: Optional[float] = None

    def validate(self) -> None:
        n, N = self.structure.n, self.topology.N
        if self.phi.n != n:
            raise ConfigInvalid(f"field dimension {self.phi.n} does not match n = {n}")
        if np.shape(self.x0) != (N + 1, n):
            raise ConfigInvalid(f"x0 must have shape ({N + 1}, {n}), got {np.shape(self.x0)}")
        if not np.all(np.isfinite(self.x0)):
            raise ConfigInvalid("x0 has non-finite entries")
        if self.horizon <= 0:
            raise ConfigInvalid("horizon must be positive")
        if not 0 < self.dt <= self.tuning.tau_m / 4 * (1 + 1e-12):
            raise ConfigInvalid(f"dt = {self.dt} must be in (0, tau_m/4 = {self.tuning.tau_m / 4}]")
        stride = self.record_dt / self.dt
        if self.record_dt <= 0 or abs(stride - round(stride)) > 1e-9 * stride:
            raise ConfigInvalid("record_dt must be a positive integer multiple of dt")
        for i in range(1, N + 1):
            if not self.topology.self_observe[i - 1]:
                raise MissingEstimate(f"agent {i} does not observe itself; control needs its own estimate")
        if self.xhat0 is not None:
            for pair, v in self.xhat0.items():
                if np.shape(v) != (n,):
                    raise ConfigInvalid(f"initial estimate for {pair} must have length {n}")

    @property
    def effective_lipschitz(self) -> float:
        return self.phi.lipschitz if self.lipschitz is None else self.lipschitz


@dataclass
class SimTrace:
    times: np.ndarray
    states: np.ndarray        # (R, N + 1, n); row 0 is the leader
    estimates: np.ndarray     # (R, E, n), ordered as ``pairs``
    inputs: np.ndarray        # (R, N, m)
    pairs: List[Pair]
    events: List[Tuple[int, int, float, Tuple[float, ...]]]   # (i, j, t_k, y_sent)
    step_times: np.ndarray = field(repr=False)
    structure: BlockStructure = None
    name: str = ""

    @property
    def N(self) -> int:
        return self.states.shape[1] - 1

    def estimate(self, i: int, j: int) -> np.ndarray:
        return self.estimates[:, self.pairs.index((i, j)), :]

    def edge_instants(self, i: int, j: int) -> np.ndarray:
        return np.array([t for (a, b, t, _) in self.events if (a, b) == (i, j)])

    def write_csv(self, out_dir) -> List[Path]:
        """Write ``trace.csv``, ``estimates.csv`` and ``events.csv``; returns the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n, m = self.states.shape[2], self.inputs.shape[2]
        fmt = "{:.17g}".format
        paths = []

        path = out / "trace.csv"
        self_idx = {i: self.pairs.index((i, i)) for i in range(1, self.N + 1)
                    if (i, i) in self.pairs}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "agent"] + [f"x{k + 1}" for k in range(n)]
                       + [f"xhat{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)])
            for r, t in enumerate(self.times):
                for a in range(self.N + 1):
                    row = [fmt(t), a] + [fmt(v) for v in self.states[r, a]]
                    if a in self_idx:
                        row += [fmt(v) for v in self.estimates[r, self_idx[a]]]
                    else:
                        row += [""] * n
                    row += [fmt(v) for v in self.inputs[r, a - 1]] if a > 0 else [""] * m
                    w.writerow(row)
        paths.append(path)

        path = out / "estimates.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "observer", "observed"] + [f"xhat{k + 1}" for k in range(n)])
            for r, t in enumerate(self.times):
                for e, (i, j) in enumerate(self.pairs):
                    w.writerow([fmt(t), i, j] + [fmt(v) for v in self.estimates[r, e]])
        paths.append(path)

        path = out / "events.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["observer", "observed", "instant"] + [f"y{k + 1}" for k in range(m)])
            for i, j, t, y in self.events:
                w.writerow([i, j, fmt(t)] + [fmt(v) for v in y])
        paths.append(path)
        return paths


class _Bank:
    """Stacked true states and observer estimates with their sample anchors."""

    def __init__(self, cfg: ScenarioConfig, gains: GainSet, sc: ScalingMatrices):
        bs, top, tun = cfg.structure, cfg.topology, cfg.tuning
        self.N, self.n, self.m, self.q = top.N, bs.n, bs.m, bs.q
        self.pairs = top.observed_pairs()
        E = len(self.pairs)
        self.E = E
        self.theta = tun.theta
        cm = build_chain_matrices(bs)
        self.C = cm.C
        self.At = np.ascontiguousarray(cm.A.T)
        self.phi = cfg.phi
        self.eps = dict(cfg.disturbances.epsilon)
        self.gain_ct = np.ascontiguousarray((tun.c_bar * gains.K_c @ sc.gamma_lambda).T)
        self.corr_t = np.ascontiguousarray(correction_matrix(tun.theta, sc.delta_theta, gains.K_o).T)
        # u = W @ (xhat @ gain^T): +weight on (i, j), minus the total on (i, i).
        W = np.zeros((self.N, E))
        index = {p: e for e, p in enumerate(self.pairs)}
        for e, (i, j) in enumerate(self.pairs):
            if j == 0:
                wgt = top.leader_access[i - 1]
            elif j == i:
                continue
            else:
                wgt = top.adjacency[i - 1, j - 1]
            W[i - 1, e] += wgt
            W[i - 1, index[(i, i)]] -= wgt
        self.W = W
        self.obs_rows = slice(self.N + 1, self.N + 1 + E)
        self.t_anchor = np.zeros(E)
        self.e_anchor = np.zeros((E, self.m))

    def inputs(self, S):
        return self.W @ (S[self.obs_rows] @ self.gain_ct)

    def deriv(self, t, S):
        N, n, m = self.N, self.n, self.m
        dS = S @ self.At
        dS += self.phi.eval(t, S)
        dS[1:N + 1, n - m:] += self.W @ (S[self.obs_rows] @ self.gain_ct)
        for agent, fn in self.eps.items():
            dS[agent] += fn(t)
        z = decay_factor(t, self.t_anchor, self.theta, self.q)[:, None] * self.e_anchor
        dS[self.obs_rows] -= z @ self.corr_t
        return dS


def run(cfg: ScenarioConfig, gains: Optional[GainSet] = None,
        schedules: Optional[Dict[Pair, np.ndarray]] = None) -> SimTrace:
    cfg.validate()
    if not has_directed_spanning_tree(cfg.topology):
        log.warning("topology has no leader-rooted spanning tree; consensus is not expected")
    bs, tun = cfg.structure, cfg.tuning
    gains = gains or synthesize(bs)
    sc = scaling(tun.lam, tun.theta, bs)
    bank = _Bank(cfg, gains, sc)
    N, n, m, E = bank.N, bank.n, bank.m, bank.E
    if schedules is None:
        schedules = generate_schedules(cfg.topology, tun.tau_m, tun.tau_M, cfg.horizon, cfg.seed)

    S = np.zeros((N + 1 + E, n))
    S[:N + 1] = cfg.x0
    for e, pair in enumerate(bank.pairs):
        if cfg.xhat0 is not None and pair in cfg.xhat0:
            S[N + 1 + e] = cfg.xhat0[pair]

    # Event list sorted by time, ties broken by pair order.
    ev_t, ev_e = [], []
    for e, pair in enumerate(bank.pairs):
        inst = np.asarray(schedules.get(pair, ()), dtype=float)
        ev_t.append(inst)
        ev_e.append(np.full(inst.shape, e))
    ev_t = np.concatenate(ev_t) if ev_t else np.zeros(0)
    ev_e = np.concatenate(ev_e) if ev_e else np.zeros(0, dtype=int)
    order = np.lexsort((ev_e, ev_t))
    ev_t, ev_e = ev_t[order], ev_e[order]

    K = int(round(cfg.horizon / cfg.dt))
    stride = int(round(cfg.record_dt / cfg.dt))
    regular = np.arange(K + 1) * cfg.dt
    grid = np.union1d(regular, ev_t[ev_t <= regular[-1]])
    is_record = np.zeros(grid.size, dtype=bool)
    is_record[np.searchsorted(grid, regular[::stride])] = True
    R = int(is_record.sum())

    times = np.empty(R)
    states = np.empty((R, N + 1, n))
    estimates = np.empty((R, E, n))
    inputs = np.empty((R, N, m))
    noise = cfg.disturbances.noise
    rng = np.random.default_rng([int(cfg.seed), 0x3F])
    events = []
    pairs = bank.pairs
    guard = cfg.blowup_guard

    def record(r, t):
        times[r] = t
        states[r] = S[:N + 1]
        estimates[r] = S[N + 1:]
        inputs[r] = bank.inputs(S)

    grid_list = grid.tolist()
    ev_list = ev_t.tolist()
    ev_e_list = ev_e.tolist()
    p_ev, r = 0, 0
    n_ev = len(ev_list)
    for s, t in enumerate(grid_list):
        while p_ev < n_ev and ev_list[p_ev] <= t:
            e = ev_e_list[p_ev]
            i, j = pairs[e]
            y = S[j, :m] + noise.sample(rng, m)
            bank.t_anchor[e] = ev_list[p_ev]
            bank.e_anchor[e] = S[N + 1 + e, :m] - y
            events.append((i, j, ev_list[p_ev], tuple(y.tolist())))
            p_ev += 1
        if is_record[s]:
            record(r, t)
            r += 1
        if s + 1 == len(grid_list):
            break
        h = grid_list[s + 1] - t
        k1 = bank.deriv(t, S)
        k2 = bank.deriv(t + 0.5 * h, S + 0.5 * h * k1)
        k3 = bank.deriv(t + 0.5 * h, S + 0.5 * h * k2)
        k4 = bank.deriv(t + h, S + h * k3)
        S = S + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        peak = np.max(np.abs(S))
        if not peak <= guard:
            raise NumericalBlowup(grid_list[s + 1], float(peak))

    return SimTrace(times=times, states=states, estimates=estimates, inputs=inputs,
                    pairs=list(pairs), events=events, step_times=grid,
                    structure=bs, name=cfg.name)


@dataclass(frozen=True)
class Metrics:
    times: np.ndarray
    tracking_error: np.ndarray          # (R, N): |x_i - x_0|
    mean_position_error: np.ndarray     # (R,): mean_i |x_i^(1) - x_0^(1)|
    estimation_error: Dict[Pair, np.ndarray]   # (R, q): per-block |xhat_ij - x_j|

    def series(self, name: str) -> np.ndarray:
        """Named series, e.g. ``mean_position_error``, ``tracking_error_3`` or
        ``estimation_error_1_2_block2`` (agent 1's estimate of agent 2, second block)."""
        if name == "mean_position_error":
            return self.mean_position_error
        parts = name.split("_")
        if name.startswith("tracking_error_"):
            return self.tracking_error[:, int(parts[2]) - 1]
        if name.startswith("estimation_error_"):
            i, j = int(parts[2]), int(parts[3])
            if len(parts) == 4:
                return np.linalg.norm(self.estimation_error[(i, j)], axis=1)
            return self.estimation_error[(i, j)][:, int(parts[4][len("block"):]) - 1]
        raise KeyError(name)

    def names(self) -> List[str]:
        out = ["mean_position_error"]
        out += [f"tracking_error_{i + 1}" for i in range(self.tracking_error.shape[1])]
        for (i, j), v in self.estimation_error.items():
            out.append(f"estimation_error_{i}_{j}")
            out += [f"estimation_error_{i}_{j}_block{k + 1}" for k in range(v.shape[1])]
        return out


def metrics(trace: SimTrace) -> Metrics:
    if trace.times.size == 0:
        raise ValueError("empty trace")
    bs = trace.structure
    m, q = bs.m, bs.q
    X = trace.states
    diff = X[:, 1:, :] - X[:, :1, :]
    track = np.linalg.norm(diff, axis=2)
    mean_pos = np.linalg.norm(diff[:, :, :m], axis=2).mean(axis=1)
    est = {}
    for e, (i, j) in enumerate(trace.pairs):
        err = trace.estimates[:, e, :] - X[:, j, :]
        est[(i, j)] = np.linalg.norm(err.reshape(err.shape[0], q, m), axis=2)
    return Metrics(times=trace.times, tracking_error=track,
                   mean_position_error=mean_pos, estimation_error=est)


def steady_mean_error(trace: SimTrace, window: float = 1.0 / 3.0) -> float:
    """Time average of the mean position error over the last ``window`` fraction."""
    mt = metrics(trace)
    t = mt.times
    mask = t >= t[-1] - window * (t[-1] - t[0])
    return float(np.mean(mt.mean_position_error[mask]))


def error_envelope(err: np.ndarray) -> np.ndarray:
    """Upper envelope ``max_{s >= t} err(s)``; monotone nonincreasing."""
    return np.maximum.accumulate(np.asarray(err)[::-1])[::-1]


def decay_window(times: np.ndarray, err: np.ndarray) -> Tuple[float, float]:
    """From the peak of ``err`` to the end of the run."""
    return float(times[int(np.argmax(err))]), float(times[-1])


def decay_slope(times: np.ndarray, err: np.ndarray, start: float, stop: float) -> float:
    """Least-squares slope of ``log err`` on ``[start, stop]``."""
    mask = (times >= start) & (times <= stop) & (err > 0)
    if mask.sum() < 2:
        raise ValueError("decay window holds fewer than two positive samples")
    return float(np.polyfit(times[mask], np.log(err[mask]), 1)[0])


def initial_estimates(cfg: ScenarioConfig) -> Dict[Pair, np.ndarray]:
    """Initial estimate of every observed pair, with the zero default filled in."""
    n = cfg.structure.n
    out = {}
    for pair in cfg.topology.observed_pairs():
        v = None if cfg.xhat0 is None else cfg.xhat0.get(pair)
        out[pair] = np.zeros(n) if v is None else np.asarray(v, dtype=float)
    return out
