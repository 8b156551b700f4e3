"""Exact Q-values of influence-augmented local models.

From the agent's side an IALM is a POMDP whose hidden state is the whole
action-local-state history: the next local state depends on the history
through the influence distribution, and the observation is emitted from
the new local state.  On the tiny tabular models we enumerate the
reachable action-observation tree together with the exact posterior over
histories at every node, then run backward induction.

When two IALMs differing only in their influence distributions are
compared, both use the beliefs of the first (reference) model; that is
the convention under which the simulation-lemma bound is exact
arithmetic.  Reachability is also decided by the reference model:
histories with no probability under it are excluded from the premise
and value maxima, and any alternative-influence mass leaking onto such
branches is dropped (so alternative transition rows may be
sub-stochastic on the tree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .influence import REACH_EPS, ExactInfluence

_BELIEF_EPS = REACH_EPS


class IalmTree:
    """Reachable AOH tree with shared exact beliefs over ALSHs.

    influences: list of ExactInfluence; index 0 supplies the beliefs.
    Per influence k the tree stores the AOH transition probabilities
    P_k(o' | node, a) aligned with the children lists.
    """

    def __init__(self, model, agent: int, influences):
        self.model = model
        self.agent = agent
        self.influences = list(influences)
        self.n_actions = model.action_sizes[agent]
        self.n_obs = model.agents[agent].n_observations
        self.horizon = model.horizon
        ag = model.agents[agent]
        self.obs_table = ag.obs_table              # (n_x, n_obs)
        self.reward_table = ag.reward_table        # (n_x, n_actions)
        self.Tdot = model.Tdot[agent]              # (x, u, a, x')
        n_x = model.n_local_states[agent]

        # node storage
        self.node_t: list[int] = []
        self.node_key: list[tuple] = []
        self.node_alsh: list[list[tuple]] = []
        self.node_belief: list[np.ndarray] = []
        self.node_xlast: list[np.ndarray] = []
        self.children: list = []     # [node][a] -> list of child ids
        self.trans: list = []        # [k][node][a] -> np.ndarray probs aligned with children
        self.reward: list = []       # [node] -> np.ndarray (n_actions,)

        # roots: one per initial observation with positive probability
        p_x0 = np.zeros(n_x)
        for s in np.nonzero(model.b0)[0]:
            p_x0[model.local_state(int(s), agent)] += model.b0[int(s)]
        frontier = []
        for o in range(self.n_obs):
            w = p_x0 * self.obs_table[:, o]
            total = w.sum()
            if total <= _BELIEF_EPS:
                continue
            xs = np.nonzero(w)[0]
            nid = self._add_node(0, (o,), [(int(x),) for x in xs],
                                 w[xs] / total, xs.astype(int))
            frontier.append(nid)

        for t in range(self.horizon):
            next_frontier = []
            for nid in frontier:
                self._expand(nid, next_frontier)
            frontier = next_frontier

        self.n_nodes = len(self.node_t)
        self.decision_nodes = [n for n in range(self.n_nodes)
                               if self.node_t[n] < self.horizon]

    def _add_node(self, t, key, alsh, belief, xlast) -> int:
        nid = len(self.node_t)
        self.node_t.append(t)
        self.node_key.append(key)
        self.node_alsh.append(alsh)
        self.node_belief.append(belief)
        self.node_xlast.append(xlast)
        self.children.append([[] for _ in range(self.n_actions)])
        for k in range(len(self.influences)):
            if len(self.trans) <= k:
                self.trans.append([])
            self.trans[k].append([None] * self.n_actions)
        self.reward.append(self.reward_table[xlast].T @ belief)
        return nid

    def _expand(self, nid: int, out_frontier) -> None:
        t = self.node_t[nid]
        alsh = self.node_alsh[nid]
        belief = self.node_belief[nid]
        xlast = self.node_xlast[nid]
        n_inf = len(self.influences)
        rows = [np.stack([inf.get(k) for k in alsh]) for inf in self.influences]
        td = self.Tdot[xlast]  # (n_l, n_u, n_actions, n_x)
        for a in range(self.n_actions):
            # M_k[l, x'] = belief(l) * sum_u I_k(u|l) Tdot(x'|x_l, u, a)
            Ms = [np.einsum("l,lu,lux->lx", belief, rows[k], td[:, :, a, :])
                  for k in range(n_inf)]
            # per observation: W_k[l, x'] = M_k * O(o'|x')
            obs_mass = [M @ self.obs_table for M in Ms]  # (n_l, n_obs)
            totals = [om.sum(axis=0) for om in obs_mass]  # (n_obs,)
            for o in range(self.n_obs):
                if totals[0][o] <= _BELIEF_EPS:
                    continue  # unreachable under the reference influence
                W = Ms[0] * self.obs_table[:, o][None, :]
                total = W.sum()
                pairs = np.argwhere(W > 0)
                child_alsh = []
                child_belief = []
                child_x = []
                for li, xi in pairs:
                    child_alsh.append(alsh[li] + (a, int(xi)))
                    child_belief.append(W[li, xi] / total)
                    child_x.append(int(xi))
                cid = self._add_node(t + 1, self.node_key[nid] + (a, o),
                                     child_alsh, np.asarray(child_belief),
                                     np.asarray(child_x, dtype=int))
                self.children[nid][a].append(cid)
            # align transition prob arrays with the children list
            for k in range(n_inf):
                probs = []
                for cid in self.children[nid][a]:
                    o = self.node_key[cid][-1]
                    probs.append(totals[k][o])
                self.trans[k][nid][a] = np.asarray(probs)
        if t + 1 < self.horizon:
            for a in range(self.n_actions):
                out_frontier.extend(self.children[nid][a])
        elif t + 1 == self.horizon:
            pass  # children at t == horizon are leaves

    # -- policies over the tree ----------------------------------------------

    def uniform_policy(self) -> np.ndarray:
        return np.full((self.n_nodes, self.n_actions), 1.0 / self.n_actions)

    def random_policy(self, rng, alpha: float = 1.0) -> np.ndarray:
        return rng.dirichlet(alpha * np.ones(self.n_actions), size=self.n_nodes)

    def n_deterministic_policies(self) -> int:
        return self.n_actions ** len(self.decision_nodes)

    def deterministic_policies(self):
        """Yield every deterministic policy (callers must check the count)."""
        nodes = self.decision_nodes
        total = self.n_deterministic_policies()
        for code in range(total):
            pol = np.zeros((self.n_nodes, self.n_actions))
            pol[:, 0] = 1.0
            c = code
            for n in nodes:
                pol[n, :] = 0.0
                pol[n, c % self.n_actions] = 1.0
                c //= self.n_actions
            yield pol

    # -- backward induction ----------------------------------------------------

    def q_backward(self, influence_index: int, policy: np.ndarray) -> np.ndarray:
        """Q[node, a] for a fixed policy under influence k."""
        q = np.zeros((self.n_nodes, self.n_actions))
        for nid in range(self.n_nodes - 1, -1, -1):
            if self.node_t[nid] >= self.horizon:
                continue
            for a in range(self.n_actions):
                val = self.reward[nid][a]
                kids = self.children[nid][a]
                if kids:
                    probs = self.trans[influence_index][nid][a]
                    cont = np.array([policy[c] @ q[c] for c in kids])
                    val += probs @ cont
                q[nid, a] = val
        return q

    def optimal_backward(self, influence_index: int):
        """Optimal Q and greedy policy (ties broken by lowest action index)."""
        q = np.zeros((self.n_nodes, self.n_actions))
        v = np.zeros(self.n_nodes)
        greedy = np.zeros(self.n_nodes, dtype=int)
        for nid in range(self.n_nodes - 1, -1, -1):
            if self.node_t[nid] >= self.horizon:
                continue
            for a in range(self.n_actions):
                val = self.reward[nid][a]
                kids = self.children[nid][a]
                if kids:
                    probs = self.trans[influence_index][nid][a]
                    val += probs @ v[kids]
                q[nid, a] = val
            greedy[nid] = int(np.argmax(q[nid]))
            v[nid] = q[nid, greedy[nid]]
        return q, greedy

    def policy_from_greedy(self, greedy: np.ndarray) -> np.ndarray:
        pol = np.zeros((self.n_nodes, self.n_actions))
        pol[np.arange(self.n_nodes), greedy] = 1.0
        return pol

    def premise_sum(self, i1: ExactInfluence, i2: ExactInfluence) -> np.ndarray:
        """Per-node sum_l P(l|h) sum_u |I1(u|l) - I2(u|l)| (decision nodes)."""
        out = np.zeros(self.n_nodes)
        for nid in self.decision_nodes:
            gap = 0.0
            for key, w in zip(self.node_alsh[nid], self.node_belief[nid]):
                gap += w * float(np.abs(i1.get(key) - i2.get(key)).sum())
            out[nid] = gap
        return out


@dataclass
class ExactQ:
    """Q-values keyed by action-observation history."""

    agent: int
    horizon: int
    table: dict  # aoh key -> np.ndarray over actions

    def value(self, key, action: int) -> float:
        return float(self.table[key][action])


def compute_exact_q(model, influence: ExactInfluence, policy, agent: int) -> ExactQ:
    """Backward-induction Q for a fixed agent policy.

    policy: array (n_nodes, n_actions) aligned with IalmTree node ids, or a
    callable mapping an AOH key to a probability vector.
    """
    tree = IalmTree(model, agent, [influence])
    if callable(policy):
        pol = np.zeros((tree.n_nodes, tree.n_actions))
        for nid in range(tree.n_nodes):
            pol[nid] = policy(tree.node_key[nid])
    else:
        pol = policy
    q = tree.q_backward(0, pol)
    table = {tree.node_key[n]: q[n].copy() for n in tree.decision_nodes}
    return ExactQ(agent=agent, horizon=model.horizon, table=table)


def influence_distance(i1: ExactInfluence, i2: ExactInfluence, model,
                       agent: int | None = None, tree: IalmTree | None = None) -> float:
    """Smallest xi bounding sum_l P(l|h)|I1 - I2| over all reachable h.

    The belief P(l|h) does not depend on the agent's own policy, so the
    maximum is taken over every history reachable under any policy.
    """
    if tree is None:
        tree = IalmTree(model, i1.agent if agent is None else agent, [i1, i2])
    sums = tree.premise_sum(i1, i2)
    return float(sums.max()) if len(sums) else 0.0
