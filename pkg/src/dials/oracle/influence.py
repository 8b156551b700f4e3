"""Exact influence distributions on tabular models.

Two independent computations of I_i(u_i^t | l_i^t):

* ``compute_exact_influence`` runs the forward filter over (global state,
  other agents' policy states) conditioned on the action-local-state
  history, then marginalizes onto the influence sources.
* ``brute_force_influence`` enumerates every global trajectory reachable
  under the joint dynamics, weighting other agents' action sequences by
  explicit sums over their observation sequences.

They must agree to numerical precision on every reachable history; the
lemma-1 verifier asserts exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import stream

REACH_EPS = 1e-15


class UnreachableHistory(KeyError):
    """Requested influence for a zero-probability history."""


@dataclass
class ExactInfluence:
    agent: int
    n_values: int
    table: dict = field(default_factory=dict)   # alsh key -> probs over U_i
    weights: dict = field(default_factory=dict)  # alsh key -> reach mass

    def get(self, key) -> np.ndarray:
        row = self.table.get(key)
        if row is None:
            raise UnreachableHistory(f"zero-probability history {key}")
        return row

    def keys_at_depth(self, t: int):
        return [k for k in self.table if (len(k) - 1) // 2 == t]

    def max_depth(self) -> int:
        return max((len(k) - 1) // 2 for k in self.table)

    def linf_diff(self, other: "ExactInfluence") -> float:
        worst = 0.0
        for key, row in self.table.items():
            other_row = other.table.get(key)
            if other_row is None:
                raise UnreachableHistory(f"history {key} missing from other influence")
            worst = max(worst, float(np.max(np.abs(row - other_row))))
        return worst


def _sample(rng, p) -> int:
    r = rng.random()
    acc = 0.0
    for k in range(len(p) - 1):
        acc += p[k]
        if r < acc:
            return k
    return len(p) - 1


# ---------------------------------------------------------------------------
# forward filter
# ---------------------------------------------------------------------------


def compute_exact_influence(model, joint_policy, agent: int,
                            max_depth: int | None = None) -> ExactInfluence:
    """Exact I_i(u|l) for every reachable ALSH up to max_depth actions."""
    if max_depth is None:
        max_depth = model.horizon - 1
    others = [j for j in range(model.n_agents) if j != agent]
    n_u = model.n_source_values[agent]
    inf = ExactInfluence(agent=agent, n_values=n_u)

    obs_nonzero = {
        j: [
            [(o, float(p)) for o, p in enumerate(model.agents[j].obs_table[x]) if p > 0]
            for x in range(model.n_local_states[j])
        ]
        for j in others
    }
    trans_nonzero = {}

    def _trans(s: int, a: int):
        row = trans_nonzero.get((s, a))
        if row is None:
            probs = model.T[s, a]
            row = [(int(sp), float(p)) for sp, p in zip(np.nonzero(probs)[0], probs[probs > 0])]
            trans_nonzero[(s, a)] = row
        return row

    # roots: one per initial local state with positive mass
    roots: dict = {}
    for s in np.nonzero(model.b0)[0]:
        s = int(s)
        x0 = model.local_state(s, agent)
        combos = [((), 1.0)]
        for j in others:
            xj = model.local_state(s, j)
            combos = [
                (ps + (joint_policy[j].initial_state(o),), w * p)
                for ps, w in combos
                for o, p in obs_nonzero[j][xj]
            ]
        node = roots.setdefault((x0,), {})
        for ps, w in combos:
            key = (s, ps)
            node[key] = node.get(key, 0.0) + float(model.b0[s]) * w

    action_sizes = model.action_sizes
    n_actions_i = action_sizes[agent]
    other_action_combos = [()]
    for j in others:
        other_action_combos = [c + (aj,) for c in other_action_combos
                               for aj in range(action_sizes[j])]

    def _record(key, filt):
        total = sum(filt.values())
        if total <= REACH_EPS:
            return False
        vec = np.zeros(n_u)
        for (s, _), w in filt.items():
            vec[model.source_value(s, agent)] += w
        inf.table[key] = vec / total
        inf.weights[key] = total
        return True

    frontier = {k: f for k, f in roots.items() if _record(k, f)}
    for depth in range(max_depth):
        next_frontier: dict = {}
        for key, filt in frontier.items():
            for a_i in range(n_actions_i):
                buckets: dict = {}
                for (s, pstates), w in filt.items():
                    for combo in other_action_combos:
                        pw = w
                        for idx, j in enumerate(others):
                            pw *= joint_policy[j].prob(pstates[idx])[combo[idx]]
                        if pw <= 0.0:
                            continue
                        actions = [0] * model.n_agents
                        actions[agent] = a_i
                        for idx, j in enumerate(others):
                            actions[j] = combo[idx]
                        a_idx = model.joint_action_index(actions)
                        for s2, pt in _trans(s, a_idx):
                            base = pw * pt
                            combos2 = [((), 1.0)]
                            for idx, j in enumerate(others):
                                xj = model.local_state(s2, j)
                                combos2 = [
                                    (ps + (joint_policy[j].advance(pstates[idx], combo[idx], o),),
                                     cw * p)
                                    for ps, cw in combos2
                                    for o, p in obs_nonzero[j][xj]
                                ]
                            x2 = model.local_state(s2, agent)
                            bucket = buckets.setdefault(x2, {})
                            for ps2, cw in combos2:
                                k2 = (s2, ps2)
                                bucket[k2] = bucket.get(k2, 0.0) + base * cw
                for x2, filt2 in buckets.items():
                    child_key = key + (a_i, x2)
                    if _record(child_key, filt2):
                        next_frontier[child_key] = filt2
        frontier = next_frontier
    return inf


# ---------------------------------------------------------------------------
# brute force by trajectory enumeration
# ---------------------------------------------------------------------------


def _other_agent_weight(model, policy, j, xseq, aseq, memo) -> float:
    """Sum over observation sequences of agent j's obs and policy factors."""
    key = (j, xseq, aseq)
    val = memo.get(key)
    if val is not None:
        return val
    obs_table = model.agents[j].obs_table

    def g(k, pstate):
        if k == len(aseq):
            return 1.0
        pa = policy.prob(pstate)[aseq[k]]
        if pa == 0.0:
            return 0.0
        total = 0.0
        for o, p in enumerate(obs_table[xseq[k + 1]]):
            if p > 0:
                total += p * g(k + 1, policy.advance(pstate, aseq[k], o))
        return pa * total

    total = 0.0
    for o, p in enumerate(obs_table[xseq[0]]):
        if p > 0:
            total += p * g(0, policy.initial_state(o))
    memo[key] = total
    return total


def brute_force_influence(model, joint_policy, agent: int,
                          max_depth: int | None = None) -> ExactInfluence:
    """Independent oracle: full enumeration of global trajectories."""
    if max_depth is None:
        max_depth = model.horizon - 1
    others = [j for j in range(model.n_agents) if j != agent]
    n_u = model.n_source_values[agent]
    buckets: dict = {}
    memo: dict = {}

    joint_actions = [tuple(t) for t in model.joint_action_tuples]

    def record(alsh_key, s, chain, xseqs, aseqs):
        w = chain
        for j in others:
            w *= _other_agent_weight(model, joint_policy[j], j, xseqs[j], aseqs[j], memo)
            if w == 0.0:
                return
        vec = buckets.setdefault(alsh_key, np.zeros(n_u))
        vec[model.source_value(s, agent)] += w

    def dfs(s, depth, chain, alsh_key, xseqs, aseqs):
        record(alsh_key, s, chain, xseqs, aseqs)
        if depth == max_depth:
            return
        for a_tuple in joint_actions:
            a_idx = model.joint_action_index(a_tuple)
            row = model.T[s, a_idx]
            new_aseqs = tuple(aseqs[j] + (a_tuple[j],) for j in range(model.n_agents))
            for s2 in np.nonzero(row)[0]:
                s2 = int(s2)
                new_xseqs = tuple(xseqs[j] + (model.local_state(s2, j),)
                                  for j in range(model.n_agents))
                dfs(s2, depth + 1, chain * float(row[s2]),
                    alsh_key + (a_tuple[agent], model.local_state(s2, agent)),
                    new_xseqs, new_aseqs)

    for s in np.nonzero(model.b0)[0]:
        s = int(s)
        xseqs = tuple((model.local_state(s, j),) for j in range(model.n_agents))
        aseqs = tuple(() for _ in range(model.n_agents))
        dfs(s, 0, float(model.b0[s]), (model.local_state(s, agent),), xseqs, aseqs)

    inf = ExactInfluence(agent=agent, n_values=n_u)
    for key, vec in buckets.items():
        total = float(vec.sum())
        if total > REACH_EPS:
            inf.table[key] = vec / total
            inf.weights[key] = total
    return inf


# ---------------------------------------------------------------------------
# Monte-Carlo frequencies
# ---------------------------------------------------------------------------


def mc_influence_frequencies(model, joint_policy, agent: int, n_rollouts: int,
                             rng, max_depth: int | None = None):
    """Empirical counts of (ALSH, u) from global-simulator rollouts.

    Returns dict alsh_key -> (counts over U_i, total visits).
    """
    if max_depth is None:
        max_depth = model.horizon - 1
    n_u = model.n_source_values[agent]
    counts: dict = {}
    for _ in range(n_rollouts):
        s = model.sample_initial(rng)
        pstates = []
        for j in range(model.n_agents):
            o = model.sample_observation(s, j, rng)
            pstates.append(joint_policy[j].initial_state(o))
        key = (model.local_state(s, agent),)
        for t in range(max_depth + 1):
            vec = counts.setdefault(key, np.zeros(n_u))
            vec[model.source_value(s, agent)] += 1
            if t == max_depth:
                break
            actions = [_sample(rng, joint_policy[j].prob(pstates[j]))
                       for j in range(model.n_agents)]
            s = model.sample_step(s, actions, rng)
            for j in range(model.n_agents):
                o = model.sample_observation(s, j, rng)
                pstates[j] = joint_policy[j].advance(pstates[j], actions[j], o)
            key = key + (actions[agent], model.local_state(s, agent))
    return {k: (v, float(v.sum())) for k, v in counts.items()}


# ---------------------------------------------------------------------------
# synthetic influences for the bound checks
# ---------------------------------------------------------------------------


def random_influence_like(inf: ExactInfluence, seed: int, alpha: float = 1.0,
                          mix: float = 1.0) -> ExactInfluence:
    """Random influence on the same reachable set.

    mix=1 replaces each row by a Dirichlet draw; smaller values blend the
    draw with the original row, giving controlled perturbations.
    """
    rng = stream(seed, "influence-like", inf.agent)
    out = ExactInfluence(agent=inf.agent, n_values=inf.n_values)
    for key in sorted(inf.table.keys()):
        row = inf.table[key]
        rand = rng.dirichlet(alpha * np.ones(inf.n_values))
        out.table[key] = (1.0 - mix) * row + mix * rand
        out.weights[key] = inf.weights[key]
    return out


def flip_one_row(inf: ExactInfluence, seed: int) -> ExactInfluence:
    """Copy with a single row cyclically shifted (adversarial perturbation)."""
    rng = stream(seed, "influence-flip", inf.agent)
    keys = sorted(inf.table.keys())
    pick = keys[int(rng.integers(0, len(keys)))]
    out = ExactInfluence(agent=inf.agent, n_values=inf.n_values)
    for key in keys:
        row = inf.table[key]
        out.table[key] = np.roll(row, 1) if key == pick else row.copy()
        out.weights[key] = inf.weights[key]
    return out
