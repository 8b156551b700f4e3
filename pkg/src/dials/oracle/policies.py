"""Policy objects for the tabular models.

Policies are exposed as state machines so exact inference can key filter
entries on whatever statistic the policy actually conditions on: full
action-observation histories for table policies, just the last
observation for reactive ones.
"""

from __future__ import annotations

import numpy as np

from ..rng import stream


class UniformPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def initial_state(self, obs):
        return None

    def advance(self, pstate, action, obs):
        return None

    def prob(self, pstate) -> np.ndarray:
        return np.full(self.n_actions, 1.0 / self.n_actions)


class RandomReactivePolicy:
    """Random stochastic policy conditioned on the last observation only."""

    def __init__(self, n_actions: int, n_observations: int, seed: int, alpha: float = 1.0):
        rng = stream(seed, "reactive-policy")
        self.table = rng.dirichlet(alpha * np.ones(n_actions), size=n_observations)
        self.n_actions = n_actions

    def initial_state(self, obs):
        return obs

    def advance(self, pstate, action, obs):
        return obs

    def prob(self, pstate) -> np.ndarray:
        return self.table[pstate]


class RandomHistoryPolicy:
    """Random stochastic policy over full action-observation histories.

    Rows are drawn lazily but deterministically from (seed, history), so
    the same object queried in any order yields the same table.
    """

    def __init__(self, n_actions: int, seed: int, alpha: float = 1.0):
        self.n_actions = n_actions
        self.seed = seed
        self.alpha = alpha
        self._rows: dict = {}

    def initial_state(self, obs):
        return (obs,)

    def advance(self, pstate, action, obs):
        return pstate + (action, obs)

    def prob(self, pstate) -> np.ndarray:
        row = self._rows.get(pstate)
        if row is None:
            rng = stream(self.seed, "history-policy", *pstate)
            row = rng.dirichlet(self.alpha * np.ones(self.n_actions))
            self._rows[pstate] = row
        return row


class JointPolicy:
    """One policy object per agent."""

    def __init__(self, policies):
        self.policies = list(policies)

    def __getitem__(self, agent: int):
        return self.policies[agent]

    def __len__(self) -> int:
        return len(self.policies)


def random_joint_policy(model, seed: int, history: bool = False, alpha: float = 1.0) -> JointPolicy:
    ps = []
    for i, ag in enumerate(model.agents):
        if history:
            ps.append(RandomHistoryPolicy(ag.n_actions, seed * 1000 + i, alpha))
        else:
            ps.append(RandomReactivePolicy(ag.n_actions, ag.n_observations,
                                           seed * 1000 + i, alpha))
    return JointPolicy(ps)


def uniform_joint_policy(model) -> JointPolicy:
    return JointPolicy([UniformPolicy(a.n_actions) for a in model.agents])
