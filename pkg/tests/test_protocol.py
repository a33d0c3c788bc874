import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import dense_control
from cdconsensus.bounds import TuningParams
from cdconsensus.errors import MissingEstimate, OutOfOrderSample
from cdconsensus.gains import scaling, synthesize
from cdconsensus.model import BlockStructure, build_chain_matrices, zero_field
from cdconsensus.protocol import (ObserverState, ProtocolConfig, control_input,
                                  correction_matrix, decay_factor, observer_derivative,
                                  on_sample, z_value)
from cdconsensus.topology import two_follower_topology, ten_agent_topology, h_matrix, random_pinned_digraph


def make_config(top, bs, c_bar=1.0, lam=2.0, theta=20.0):
    tun = TuningParams(c_bar, lam, theta, 0.02, 0.04)
    return ProtocolConfig(tun, synthesize(bs), scaling(lam, theta, bs), top)


def exact_bank(top, x, i, m):
    return {j: ObserverState.initial(i, j, x[j], m) for (a, j) in top.observed_pairs() if a == i}


@pytest.mark.parametrize("q,m", [(1, 1), (2, 3), (3, 2)])
def test_control_matches_dense_formula(q, m):
    rng = np.random.default_rng(q * 10 + m)
    bs = BlockStructure(q, m)
    for _ in range(5):
        top = random_pinned_digraph(int(rng.integers(2, 7)), rng)
        cfg = make_config(top, bs, c_bar=float(rng.uniform(1, 3)), lam=float(rng.uniform(1, 4)))
        x = rng.normal(size=(top.N + 1, bs.n))
        expected = dense_control(h_matrix(top), cfg.gains.K_c, cfg.scaling.gamma_lambda,
                                 cfg.tuning.c_bar, x)
        for i in range(1, top.N + 1):
            u = control_input(i, cfg, exact_bank(top, x, i, m))
            assert np.allclose(u, expected[i - 1], atol=1e-10)


def test_two_follower_example_input():
    # u_1 = c lam^2 (xhat_10^(1) - xhat_11^(1)) + 2 c lam (xhat_10^(2) - xhat_11^(2))
    top = two_follower_topology()
    bs = BlockStructure(2, 1)
    c_bar, lam = 1.5, 3.0
    cfg = make_config(top, bs, c_bar=c_bar, lam=lam)
    x = np.array([[1.0, -0.5], [0.2, 0.4], [-1.0, 2.0]])
    u1 = control_input(1, cfg, exact_bank(top, x, 1, 1))
    d1, d2 = x[0] - x[1]
    assert u1[0] == pytest.approx(c_bar * lam ** 2 * d1 + 2 * c_bar * lam * d2)
    u2 = control_input(2, cfg, exact_bank(top, x, 2, 1))
    e1, e2 = x[1] - x[2]
    assert u2[0] == pytest.approx(c_bar * lam ** 2 * e1 + 2 * c_bar * lam * e2)


def test_missing_estimates():
    top = two_follower_topology()
    cfg = make_config(top, BlockStructure(2, 1))
    x = np.zeros((3, 2))
    bank = exact_bank(top, x, 1, 1)
    del bank[0]
    with pytest.raises(MissingEstimate):
        control_input(1, cfg, bank)
    with pytest.raises(MissingEstimate):
        control_input(2, cfg, {1: bank[1]})


def test_sample_reanchors_without_jump():
    obs = ObserverState.initial(1, 2, np.array([1.0, 2.0]), 1)
    assert np.allclose(z_value(obs, 10.0, 2, 0.5), 0.0)
    s = on_sample(obs, 0.3, np.array([0.25]))
    assert s.t_anchor == 0.3 and np.allclose(s.e_anchor, [0.75])
    assert np.allclose(s.x_hat, obs.x_hat)
    z = z_value(s, 10.0, 2, 0.4)
    assert np.allclose(z, 0.75 * np.exp(-10.0 * 2 * 0.1))
    with pytest.raises(OutOfOrderSample):
        on_sample(s, 0.2, np.array([0.0]))
    with pytest.raises(ValueError):
        z_value(s, 10.0, 2, 0.1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 100), st.integers(1, 6), st.floats(0, 5), st.floats(0, 5))
def test_decay_factor_semigroup(theta, q, s1, s2):
    assert decay_factor(s1 + s2, 0.0, theta, q) == pytest.approx(
        decay_factor(s1, 0.0, theta, q) * decay_factor(s2, 0.0, theta, q), rel=1e-9, abs=1e-300)
    assert 0 < decay_factor(s1, 0.0, theta, q) <= 1.0 or decay_factor(s1, 0.0, theta, q) == 0.0


def test_observer_derivative_and_correction():
    bs = BlockStructure(2, 1)
    cm = build_chain_matrices(bs)
    g = synthesize(bs)
    sc = scaling(1.0, 4.0, bs)
    Kc = correction_matrix(4.0, sc.delta_theta, g.K_o)
    assert np.allclose(Kc.ravel(), [4 * 2, 16 * 1])   # theta Delta^-1 K_o = (2 theta, theta^2)
    obs = on_sample(ObserverState.initial(1, 0, np.array([1.0, 0.5]), 1), 0.0, np.array([0.0]))
    d = observer_derivative(obs, cm, zero_field(2), 4.0, sc.delta_theta, g.K_o, 0.0)
    assert np.allclose(d, [0.5 - 8.0, -16.0])


def test_observer_converges_between_exact_samples():
    # With a constant leader and noiseless frequent samples the linear observer
    # reaches the true state: the error system is Hurwitz with poles at -theta.
    bs = BlockStructure(2, 1)
    cm = build_chain_matrices(bs)
    g = synthesize(bs)
    theta = 5.0
    sc = scaling(1.0, theta, bs)
    truth = np.array([1.0, 0.0])
    obs = ObserverState.initial(1, 0, np.zeros(2), 1)
    dt = 1e-3
    for k in range(6000):
        t = k * dt
        if k % 10 == 0:
            obs = on_sample(obs, t, truth[:1])
        d = observer_derivative(obs, cm, zero_field(2), theta, sc.delta_theta, g.K_o, t)
        obs = ObserverState(obs.i, obs.j, obs.x_hat + dt * d, obs.t_anchor, obs.e_anchor)
    assert np.allclose(obs.x_hat, truth, atol=1e-3)


def test_simulator_bank_matches_control_law():
    from cdconsensus.simulator import _Bank, ScenarioConfig
    from cdconsensus.model import DisturbanceSpec
    top = ten_agent_topology()
    bs = BlockStructure(2, 3)
    tun = TuningParams(1.0, 2.0, 20.0, 0.02, 0.04)
    cfg = ScenarioConfig(bs, zero_field(6), top, tun, DisturbanceSpec(),
                         np.zeros((11, 6)))
    pcfg = make_config(top, bs)
    bank = _Bank(cfg, pcfg.gains, pcfg.scaling)
    rng = np.random.default_rng(5)
    S = rng.normal(size=(11 + len(bank.pairs), 6))
    u = bank.inputs(S)
    for i in range(1, 11):
        ests = {j: ObserverState.initial(i, j, S[11 + e], 3)
                for e, (a, j) in enumerate(bank.pairs) if a == i}
        assert np.allclose(u[i - 1], control_input(i, pcfg, ests), atol=1e-10)
