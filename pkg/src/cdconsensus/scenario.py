"""Scenario files: YAML documents describing one simulation setup.

See ``scenarios/example.yaml`` for the annotated schema.  Every schema error
is reported as :class:`ConfigInvalid` with the offending line when known.
"""
from __future__ import annotations

import importlib
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import yaml

from .bounds import TuningParams
from .errors import ConfigInvalid
from .model import (BlockStructure, DisturbanceSpec, NoiseModel, NonlinearField,
                    chua_nonlinear_field, leader_cosine_uncertainty, zero_field)
from .simulator import ScenarioConfig
from .topology import Topology, two_follower_topology, ten_agent_topology

BUNDLED = ("chua_clean", "chua_noisy", "certified_small")

_UNCERTAINTIES = {"cosine": leader_cosine_uncertainty}
_TOPOLOGIES = {"ten_agent": ten_agent_topology, "two_follower": two_follower_topology}


class _Located:
    """Maps key paths of a YAML document to 1-based line numbers."""

    def __init__(self, text: str):
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError:
            self.root = None

    def line(self, path: Sequence[Any]) -> Optional[int]:
        node = self.root
        line = None
        for key in path:
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == str(key):
                        line = k.start_mark.line + 1
                        node = v
                        break
                else:
                    return line
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                    and key < len(node.value):
                node = node.value[key]
                line = node.start_mark.line + 1
            else:
                return line
        return line


class _Reader:
    def __init__(self, doc: dict, where: _Located, source: str):
        self.doc, self.where, self.source = doc, where, source

    def fail(self, path, msg):
        line = self.where.line(path)
        loc = f"{self.source}:{line}" if line else self.source
        raise ConfigInvalid(f"{loc}: {'.'.join(map(str, path))}: {msg}")

    def get(self, path, default=..., kind=None):
        node = self.doc
        for key in path:
            if not isinstance(node, dict) or key not in node:
                if default is ...:
                    self.fail(path, "missing required key")
                return default
            node = node[key]
        if kind is not None:
            try:
                if kind is float and isinstance(node, bool):
                    raise TypeError
                node = kind(node)
            except (TypeError, ValueError):
                self.fail(path, f"expected {kind.__name__}, got {node!r}")
        return node


def _import_target(target: str):
    mod, _, attr = target.partition(":")
    return getattr(importlib.import_module(mod), attr)


def parse_scenario(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigInvalid(f"{loc}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{source}: top level must be a mapping")
    r = _Reader(doc, _Located(text), source)

    try:
        bs = BlockStructure(r.get(("structure", "q"), kind=int), r.get(("structure", "m"), kind=int))
    except ValueError as exc:
        r.fail(("structure",), str(exc))

    kind = r.get(("field", "kind"), "chua", str)
    lip = r.get(("field", "lipschitz"), None)
    if kind == "chua":
        if bs.n != 6 or bs.m != 3:
            r.fail(("field", "kind"), "the chua field needs q = 2, m = 3")
        phi = chua_nonlinear_field() if lip is None else chua_nonlinear_field(float(lip))
    elif kind == "zero":
        phi = zero_field(bs.n)
    elif kind == "plugin":
        target = r.get(("field", "target"), kind=str)
        try:
            fn = _import_target(target)
        except (ImportError, AttributeError) as exc:
            r.fail(("field", "target"), f"cannot import {target!r}: {exc}")
        if lip is None:
            r.fail(("field", "lipschitz"), "plugin fields must declare a Lipschitz constant")
        phi = NonlinearField(fn, lipschitz=float(lip), n=bs.n, name=target)
    else:
        r.fail(("field", "kind"), f"unknown field kind {kind!r}")

    preset = r.get(("topology", "preset"), None)
    try:
        if preset is not None:
            if preset not in _TOPOLOGIES:
                r.fail(("topology", "preset"), f"unknown preset {preset!r}")
            top = _TOPOLOGIES[preset]()
        else:
            N = r.get(("topology", "agents"), kind=int)
            edges = [tuple(int(v) for v in e) for e in r.get(("topology", "edges"), [])]
            pinned = [int(v) for v in r.get(("topology", "pinned"), kind=list)]
            top = Topology.from_edges(N, edges, pinned, r.get(("topology", "self_observe"), None))
    except (TypeError, ValueError) as exc:
        r.fail(("topology",), str(exc))

    try:
        tuning = TuningParams(
            c_bar=r.get(("tuning", "c_bar"), kind=float),
            lam=r.get(("tuning", "lambda"), kind=float),
            theta=r.get(("tuning", "theta"), kind=float),
            tau_m=r.get(("tuning", "tau_m"), kind=float),
            tau_M=r.get(("tuning", "tau_M"), kind=float))
    except ValueError as exc:
        r.fail(("tuning",), str(exc))

    eps = {}
    for k, item in enumerate(r.get(("disturbances", "uncertainty"), []) or []):
        path = ("disturbances", "uncertainty", k)
        if not isinstance(item, dict) or "agent" not in item or "kind" not in item:
            r.fail(path, "entries need 'agent' and 'kind'")
        agent, ukind = int(item["agent"]), item["kind"]
        if not 0 <= agent <= top.N:
            r.fail(path, f"agent {agent} outside 0..{top.N}")
        if ukind in _UNCERTAINTIES:
            if bs.n != 6:
                r.fail(path, f"{ukind!r} uncertainty needs n = 6")
            eps[agent] = _UNCERTAINTIES[ukind]
        elif ukind == "plugin":
            eps[agent] = _import_target(str(item.get("target", "")))
        else:
            r.fail(path, f"unknown uncertainty kind {ukind!r}")
    bounds = r.get(("disturbances", "epsilon_bounds"), None)
    if bounds is not None and len(bounds) != bs.q:
        r.fail(("disturbances", "epsilon_bounds"), f"need {bs.q} entries")
    nkind = r.get(("disturbances", "noise", "kind"), "none", str)
    if nkind == "gaussian":
        var = r.get(("disturbances", "noise", "variance"), kind=float)
        if var < 0:
            r.fail(("disturbances", "noise", "variance"), "variance must be nonnegative")
        noise = NoiseModel("gaussian", float(np.sqrt(var)))
    elif nkind == "bounded":
        noise = NoiseModel("bounded", r.get(("disturbances", "noise", "bound"), kind=float))
    elif nkind == "none":
        noise = NoiseModel()
    else:
        r.fail(("disturbances", "noise", "kind"), f"unknown noise model {nkind!r}")
    dist = DisturbanceSpec(eps, None if bounds is None else tuple(float(b) for b in bounds), noise)

    seed = r.get(("simulation", "seed"), 0, int)
    horizon = r.get(("simulation", "horizon"), kind=float)
    dt = r.get(("simulation", "dt"), 1e-3, float)
    record_dt = r.get(("simulation", "record_dt"), 0.01, float)
    guard = r.get(("simulation", "blowup_guard"), 1e9, float)

    x0 = initial_states(r, top.N, bs.n, seed)
    xhat0 = None
    est = r.get(("initial", "estimates"), "zero")
    if est == "exact":
        xhat0 = {(i, j): x0[j].copy() for (i, j) in top.observed_pairs()}
    elif est != "zero":
        r.fail(("initial", "estimates"), "expected 'zero' or 'exact'")

    cfg = ScenarioConfig(structure=bs, phi=phi, topology=top, tuning=tuning,
                         disturbances=dist, x0=x0, xhat0=xhat0, horizon=horizon, dt=dt,
                         seed=seed, record_dt=record_dt, blowup_guard=guard,
                         name=str(r.get(("name",), "scenario")),
                         lipschitz=None if lip is None else float(lip))
    try:
        cfg.validate()
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{source}: {exc}") from None
    return cfg


def initial_states(r: _Reader, N: int, n: int, seed: int) -> np.ndarray:
    """Explicit ``initial.leader``/``initial.followers`` or uniform draws in ``initial.box``."""
    box = r.get(("initial", "box"), 1.0, float)
    rng = np.random.default_rng([int(seed), 0x11])
    x0 = rng.uniform(-box, box, size=(N + 1, n))
    leader = r.get(("initial", "leader"), None)
    if leader is not None:
        if len(leader) != n:
            r.fail(("initial", "leader"), f"need {n} entries")
        x0[0] = np.asarray(leader, dtype=float)
    followers = r.get(("initial", "followers"), None)
    if followers is not None:
        arr = np.asarray(followers, dtype=float)
        if arr.shape != (N, n):
            r.fail(("initial", "followers"), f"need shape ({N}, {n})")
        x0[1:] = arr
    return x0


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by name (``chua_clean``, ...)."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return parse_scenario(bundled_text(str(path)), source=f"{path}.yaml")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_scenario(text, source=str(path))


def bundled_text(name: str) -> str:
    return resources.files("cdconsensus").joinpath("scenarios", f"{name}.yaml").read_text()


def with_overrides(cfg: ScenarioConfig, seed=None, horizon=None, dt=None, **tuning) -> ScenarioConfig:
    """Copy of ``cfg`` with simulation settings or tuning fields replaced.

    Changing the seed does not redraw initial states; they are part of the config.
    """
    upd: Dict[str, Any] = {}
    if seed is not None:
        upd["seed"] = int(seed)
    if horizon is not None:
        upd["horizon"] = float(horizon)
    if dt is not None:
        upd["dt"] = float(dt)
    if tuning:
        upd["tuning"] = replace(cfg.tuning, **tuning)
    new = replace(cfg, **upd)
    new.validate()
    return new
