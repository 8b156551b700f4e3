import numpy as np
import pytest

from dials.oracle import (
    StructureError,
    TabularFposg,
    Variable,
    coupled_toy,
    independent_toy,
    load_model,
    save_model,
)
from dials.oracle.model import AgentSpec


def _simple_variable(name, parents, n_rows, domain=2):
    cpt = np.full((n_rows, domain), 1.0 / domain)
    return Variable(name, domain, parents, cpt, np.array([0.5, 0.5]))


def test_coupled_toy_builds_and_rows_normalized():
    m = coupled_toy(seed=1, horizon=3)
    assert m.n_states == 4
    assert np.allclose(m.T.sum(axis=2), 1.0, atol=1e-12)
    for td in m.Tdot:
        assert np.allclose(td.sum(axis=3), 1.0, atol=1e-12)
    assert np.isclose(m.b0.sum(), 1.0)


def test_transition_independence_flags():
    assert independent_toy(seed=2).transition_independent(0)
    assert independent_toy(seed=2).transition_independent(1)
    assert not coupled_toy(seed=2).transition_independent(0)


def test_dsep_violation_rejected():
    # x0 depends on a1 directly: not allowed when x0 is agent 0's local var
    variables = [
        _simple_variable("x0", ["x0", "a1"], 4),
        _simple_variable("x1", ["x1", "a1"], 4),
    ]
    agents = [
        AgentSpec(2, 2, ["x0"], ["x1"], np.full((2, 2), 0.5), np.zeros((2, 2))),
        AgentSpec(2, 2, ["x1"], ["x0"], np.full((2, 2), 0.5), np.zeros((2, 2))),
    ]
    with pytest.raises(StructureError):
        TabularFposg(variables, agents, horizon=2)


def test_bad_row_sum_rejected():
    v = _simple_variable("x0", ["x0", "a0"], 4)
    v.cpt[0, 0] = 0.9  # row no longer sums to 1
    agents = [AgentSpec(2, 2, ["x0"], [], np.full((2, 2), 0.5), np.zeros((2, 2)))]
    with pytest.raises(ValueError, match="sum to 1"):
        TabularFposg([v], agents, horizon=2)


def test_caps_enforced():
    with pytest.raises(ValueError, match="horizon"):
        coupled_toy(seed=3, horizon=9)
    # |S| cap: 2^10 = 1024 > 512
    variables = [_simple_variable(f"v{k}", [f"v{k}"], 2) for k in range(10)]
    agents = [AgentSpec(2, 2, ["v0"], ["v1"], np.full((2, 2), 0.5), np.zeros((2, 2)))]
    with pytest.raises(ValueError, match="exceeds cap"):
        TabularFposg(variables, agents, horizon=2)


def test_joint_transition_matches_factored_product():
    m = coupled_toy(seed=4, horizon=2)
    # T(s'|s,a) must equal the product of per-variable rows
    x0, x1 = m.variables
    for s in range(m.n_states):
        v0, v1 = m.state_tuples[s]
        for a0 in range(2):
            for a1 in range(2):
                a = m.joint_action_index((a0, a1))
                for sp in range(m.n_states):
                    w0, w1 = m.state_tuples[sp]
                    expect = (
                        x0.cpt[np.ravel_multi_index((v0, v1, a0), (2, 2, 2))][w0]
                        * x1.cpt[np.ravel_multi_index((v1, v0, a1), (2, 2, 2))][w1]
                    )
                    assert np.isclose(m.T[s, a, sp], expect, atol=1e-14)


def test_local_transition_consistent_with_joint():
    # summing T over next non-local vars conditioned on sources reproduces Tdot
    m = coupled_toy(seed=5, horizon=2)
    td = m.Tdot[0]
    for s in range(m.n_states):
        x = m.local_state(s, 0)
        u = m.source_value(s, 0)
        for a0 in range(2):
            for a1 in range(2):
                a = m.joint_action_index((a0, a1))
                marg = np.zeros(m.n_local_states[0])
                for sp in range(m.n_states):
                    marg[m.local_state(sp, 0)] += m.T[s, a, sp]
                assert np.allclose(marg, td[x, u, a0], atol=1e-12)


def test_model_file_roundtrip(tmp_path):
    m = independent_toy(seed=6, horizon=3)
    path = tmp_path / "toy.yaml"
    save_model(m, path)
    m2 = load_model(path)
    assert m2.name == m.name
    assert m2.horizon == m.horizon
    assert np.allclose(m2.T, m.T)
    assert np.allclose(m2.b0, m.b0)
    for a, b in zip(m2.agents, m.agents):
        assert np.allclose(a.obs_table, b.obs_table)
        assert np.allclose(a.reward_table, b.reward_table)


def test_model_file_schema_errors(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("version: 99\nhorizon: 2\nvariables: []\nagents: []\n")
    with pytest.raises(ValueError, match="version"):
        load_model(path)
    path.write_text("- not\n- a\n- mapping\n")
    with pytest.raises(ValueError, match="mapping"):
        load_model(path)
    path.write_text("version: 1\nvariables: []\nagents: []\n")
    with pytest.raises(ValueError, match="horizon"):
        load_model(path)


def test_sampling_matches_b0(tmp_path):
    m = independent_toy(seed=7, horizon=2)
    rng = np.random.default_rng(0)
    counts = np.zeros(m.n_states)
    for _ in range(4000):
        counts[m.sample_initial(rng)] += 1
    assert np.max(np.abs(counts / 4000 - m.b0)) < 0.05
