"""Machine checks of the influence-abstraction results on tabular toys.

Each verifier returns a small report dataclass (JSON-serializable via
``dataclasses.asdict``) rather than asserting, so the CLI can emit the
outcome and tests can assert on specific fields.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rng import stream
from .influence import (
    ExactInfluence,
    brute_force_influence,
    compute_exact_influence,
    mc_influence_frequencies,
)
from .model import StructureError, TabularFposg
from .qvalue import IalmTree

DET_POLICY_LIMIT = 10_000
N_RANDOM_POLICIES = 200


def _policy_set(tree: IalmTree, seed: int):
    """Exhaustive deterministic policies when feasible, else seeded samples."""
    n_det = tree.n_deterministic_policies()
    if n_det <= DET_POLICY_LIMIT:
        return list(tree.deterministic_policies()), "exhaustive", n_det
    rng = stream(seed, "policy-samples", tree.agent)
    return [tree.random_policy(rng) for _ in range(N_RANDOM_POLICIES)], "sampled", N_RANDOM_POLICIES


# ---------------------------------------------------------------------------
# Lemma 1: the recursion and brute-force enumeration agree
# ---------------------------------------------------------------------------


@dataclass
class Lemma1Report:
    agent: int
    n_histories: int
    max_linf: float
    key_sets_match: bool
    holds: bool

    def to_dict(self):
        return asdict(self)


def verify_lemma1(model: TabularFposg, joint_policy, agent: int,
                  tol: float = 1e-10) -> Lemma1Report:
    rec = compute_exact_influence(model, joint_policy, agent)
    bf = brute_force_influence(model, joint_policy, agent)
    keys_match = set(rec.table) == set(bf.table)
    worst = 0.0
    common = set(rec.table) & set(bf.table)
    for key in common:
        worst = max(worst, float(np.max(np.abs(rec.table[key] - bf.table[key]))))
    return Lemma1Report(
        agent=agent,
        n_histories=len(common),
        max_linf=worst,
        key_sets_match=keys_match,
        holds=keys_match and worst <= tol,
    )


@dataclass
class McReport:
    n_rollouts: int
    n_cells: int
    n_beyond_3se: int
    max_z: float

    def to_dict(self):
        return asdict(self)


def mc_check_influence(model: TabularFposg, joint_policy, agent: int,
                       exact: ExactInfluence, n_rollouts: int, rng,
                       min_expected: float = 5.0) -> McReport:
    """Compare Monte-Carlo conditional frequencies against the exact values.

    Only cells with normal-approximation support (n*p*(1-p) >= min_expected)
    are scored; z is |phat - p| / sqrt(p(1-p)/n).
    """
    freqs = mc_influence_frequencies(model, joint_policy, agent, n_rollouts, rng)
    n_cells = 0
    beyond = 0
    max_z = 0.0
    for key, (counts, total) in freqs.items():
        row = exact.table.get(key)
        if row is None or total == 0:
            continue
        for u, p in enumerate(row):
            if p <= 0.0 or p >= 1.0:
                continue
            if total * p * (1 - p) < min_expected:
                continue
            se = np.sqrt(p * (1 - p) / total)
            z = abs(counts[u] / total - p) / se
            n_cells += 1
            max_z = max(max_z, float(z))
            if z > 3.0:
                beyond += 1
    return McReport(n_rollouts=n_rollouts, n_cells=n_cells,
                    n_beyond_3se=beyond, max_z=max_z)


# ---------------------------------------------------------------------------
# Corollary 1: transition independence gives a unique influence
# ---------------------------------------------------------------------------


@dataclass
class Corollary1Report:
    agent: int
    structural_independent: bool
    n_policies: int
    n_common_histories: int
    max_pairwise_linf: float
    coupling_detected: bool
    holds: bool

    def to_dict(self):
        return asdict(self)


def verify_corollary1(model: TabularFposg, policies: list, agent: int,
                      tol: float = 1e-12,
                      require_independent: bool = True) -> Corollary1Report:
    independent = model.transition_independent(agent)
    if require_independent and not independent:
        raise StructureError(
            f"agent {agent}: influence sources depend on other agents' actions"
        )
    infs = [compute_exact_influence(model, pol, agent) for pol in policies]
    common = set(infs[0].table)
    for inf in infs[1:]:
        common &= set(inf.table)
    worst = 0.0
    for a in range(len(infs)):
        for b in range(a + 1, len(infs)):
            for key in common:
                worst = max(worst, float(np.max(np.abs(
                    infs[a].table[key] - infs[b].table[key]))))
    return Corollary1Report(
        agent=agent,
        structural_independent=independent,
        n_policies=len(policies),
        n_common_histories=len(common),
        max_pairwise_linf=worst,
        coupling_detected=worst > 1e-6,
        holds=independent and worst <= tol,
    )


# ---------------------------------------------------------------------------
# Lemma 2: simulation-lemma value bound
# ---------------------------------------------------------------------------


@dataclass
class Lemma2Report:
    agent: int
    xi: float
    max_q_gap: float
    bound: float
    max_violation: float
    regime: str
    n_policies: int
    holds: bool

    def to_dict(self):
        return asdict(self)


def verify_lemma2(model: TabularFposg, i1: ExactInfluence, i2: ExactInfluence,
                  agent: int, seed: int = 0, tol: float = 1e-9) -> Lemma2Report:
    tree = IalmTree(model, agent, [i1, i2])
    xi = float(tree.premise_sum(i1, i2).max()) if tree.decision_nodes else 0.0
    rbar = model.max_abs_reward
    H = model.horizon
    t_arr = np.asarray([tree.node_t[n] for n in tree.decision_nodes])
    bounds = rbar * (H - t_arr) * (H - t_arr + 1) / 2.0 * xi
    policies, regime, n_pol = _policy_set(tree, seed)
    max_gap = 0.0
    max_violation = -np.inf
    for pol in policies:
        gaps = np.abs(tree.q_backward(0, pol) - tree.q_backward(1, pol))
        node_gaps = gaps[tree.decision_nodes].max(axis=1)
        max_gap = max(max_gap, float(node_gaps.max()))
        max_violation = max(max_violation, float((node_gaps - bounds).max()))
    return Lemma2Report(
        agent=agent,
        xi=xi,
        max_q_gap=max_gap,
        bound=float(rbar * H * (H + 1) / 2.0 * xi),
        max_violation=float(max_violation),
        regime=regime,
        n_policies=n_pol,
        holds=max_violation <= tol,
    )


# ---------------------------------------------------------------------------
# Lemma A.3: total-variation bound on AOH transitions
# ---------------------------------------------------------------------------


@dataclass
class LemmaA3Report:
    agent: int
    max_lhs: float
    max_violation: float
    holds: bool

    def to_dict(self):
        return asdict(self)


def verify_lemma_a3(model: TabularFposg, i1: ExactInfluence, i2: ExactInfluence,
                    agent: int, tol: float = 1e-12) -> LemmaA3Report:
    tree = IalmTree(model, agent, [i1, i2])
    rhs = tree.premise_sum(i1, i2)
    max_lhs = 0.0
    max_violation = -np.inf
    for nid in tree.decision_nodes:
        for a in range(tree.n_actions):
            p1 = tree.trans[0][nid][a]
            p2 = tree.trans[1][nid][a]
            if p1 is None or len(p1) == 0:
                continue
            lhs = float(np.abs(p1 - p2).sum())
            max_lhs = max(max_lhs, lhs)
            max_violation = max(max_violation, lhs - float(rhs[nid]))
    return LemmaA3Report(
        agent=agent,
        max_lhs=max_lhs,
        max_violation=float(max_violation),
        holds=max_violation <= tol,
    )


# ---------------------------------------------------------------------------
# Theorem 2: action gap > 2*Delta preserves the optimal policy
# ---------------------------------------------------------------------------


@dataclass
class Theorem2Report:
    agent: int
    delta: float
    two_delta: float
    min_action_gap: float
    precondition_met: bool
    same_argmax: bool
    vacuous: bool
    regime: str
    n_policies: int
    holds: bool

    def to_dict(self):
        return asdict(self)


def verify_theorem2(model: TabularFposg, i1: ExactInfluence, i2: ExactInfluence,
                    agent: int, seed: int = 0, slack: float = 1e-9) -> Theorem2Report:
    tree = IalmTree(model, agent, [i1, i2])
    q1_star, greedy1 = tree.optimal_backward(0)
    q2_star, greedy2 = tree.optimal_backward(1)
    policies, regime, n_pol = _policy_set(tree, seed)
    policies = policies + [tree.policy_from_greedy(greedy1),
                           tree.policy_from_greedy(greedy2)]
    delta = 0.0
    for pol in policies:
        gap = np.abs(tree.q_backward(0, pol) - tree.q_backward(1, pol))
        delta = max(delta, float(gap[tree.decision_nodes].max()))
    # action gap of model 1's optimal policy at every history
    min_gap = np.inf
    if tree.n_actions >= 2:
        for nid in tree.decision_nodes:
            ordered = np.sort(q1_star[nid])
            min_gap = min(min_gap, float(ordered[-1] - ordered[-2]))
    dec = tree.decision_nodes
    same = bool(np.array_equal(greedy1[dec], greedy2[dec]))
    precondition = bool(min_gap > 2.0 * delta + slack)
    return Theorem2Report(
        agent=agent,
        delta=delta,
        two_delta=2.0 * delta,
        min_action_gap=float(min_gap),
        precondition_met=precondition,
        same_argmax=same,
        vacuous=not precondition,
        regime=regime,
        n_policies=n_pol,
        holds=(not precondition) or same,
    )
