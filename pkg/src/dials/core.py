"""Shared domain types and the abstract environment contract.

Local states and influence-source values are plain tuples of ints so they
can be used as dict keys, serialized to traces, and copied between workers
without ceremony.  Histories are immutable value objects backed by flat
tuples; ``append`` returns a new history and never mutates the receiver.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

Action = int
AgentId = int

# A local state / influence-source value is a flat tuple of finite-domain ints.
LocalState = tuple
InfluenceSourceValue = tuple


@dataclass(frozen=True)
class LocalHistory:
    """Action-local-state history: x0, a0, x1, ..., a_{t-1}, x_t."""

    states: tuple
    actions: tuple = ()

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"history needs len(states) == len(actions)+1, got "
                f"{len(self.states)} states / {len(self.actions)} actions"
            )

    @property
    def t(self) -> int:
        return len(self.actions)

    @property
    def last_state(self):
        return self.states[-1]

    def append(self, action: Action, state) -> "LocalHistory":
        return LocalHistory(self.states + (state,), self.actions + (action,))

    def key(self) -> tuple:
        """Hashable flat key (x0, a0, x1, ..., x_t)."""
        out = [self.states[0]]
        for a, x in zip(self.actions, self.states[1:]):
            out.append(a)
            out.append(x)
        return tuple(out)


@dataclass(frozen=True)
class ObservationHistory:
    """Action-observation history: o0, a0, o1, ..., a_{t-1}, o_t."""

    observations: tuple
    actions: tuple = ()

    def __post_init__(self):
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError(
                f"history needs len(observations) == len(actions)+1, got "
                f"{len(self.observations)} observations / {len(self.actions)} actions"
            )

    @property
    def t(self) -> int:
        return len(self.actions)

    @property
    def last_observation(self):
        return self.observations[-1]

    def append(self, action: Action, observation) -> "ObservationHistory":
        return ObservationHistory(
            self.observations + (observation,), self.actions + (action,)
        )

    def key(self) -> tuple:
        out = [self.observations[0]]
        for a, o in zip(self.actions, self.observations[1:]):
            out.append(a)
            out.append(o)
        return tuple(out)


def append_history(history: LocalHistory, action: Action, state) -> LocalHistory:
    """Functional alias for LocalHistory.append."""
    return history.append(action, state)


class ContractViolation(ValueError):
    """An environment operation was called outside its contract."""


class EnvironmentContract(ABC):
    """Contract shared by global simulators, local simulators and the oracle.

    A concrete environment provides the full-system dynamics (``reset`` /
    ``step_global``), the pure projections onto each agent's local region
    and influence sources, and the matching single-region local dynamics
    driven by externally supplied influence-source values.

    Instances are single-threaded; run one instance per worker.
    """

    n_agents: int
    horizon: int

    # -- global simulator ---------------------------------------------------

    @abstractmethod
    def reset(self, rng: np.random.Generator):
        """Initial global state."""

    @abstractmethod
    def step_global(self, state, joint_action, rng: np.random.Generator):
        """One synchronous step; returns (next_state, rewards[n_agents])."""

    @abstractmethod
    def extract_local(self, state, agent: AgentId) -> LocalState:
        """Pure projection of the global state onto agent's local variables."""

    @abstractmethod
    def extract_influence_sources(self, state, agent: AgentId) -> InfluenceSourceValue:
        """Pure projection onto the agent's influence-source variables."""

    def observe(self, state, agent: AgentId) -> np.ndarray:
        """Observation encoding; both environments observe x_i exactly."""
        return self.encode_local(self.extract_local(state, agent), agent)

    # -- local simulator ----------------------------------------------------

    @abstractmethod
    def local_reset(self, agent: AgentId) -> LocalState:
        """Initial local state of the single-region simulator."""

    @abstractmethod
    def local_step(self, x: LocalState, action: Action, u: InfluenceSourceValue,
                   rng: np.random.Generator, agent: AgentId):
        """One local step under influence-source value u; returns (x', reward)."""

    @abstractmethod
    def local_reward(self, x: LocalState, action: Action, agent: AgentId) -> float:
        """Reward component that depends on (x_i, a_i) only."""

    # -- sizes and encodings ------------------------------------------------

    @abstractmethod
    def n_actions(self, agent: AgentId) -> int:
        ...

    @abstractmethod
    def influence_domains(self, agent: AgentId) -> list[int]:
        """Domain size of each influence-source component."""

    @abstractmethod
    def encode_local(self, x: LocalState, agent: AgentId) -> np.ndarray:
        """Float encoding of a local state, used for observations and AIP input."""

    @property
    def obs_dim(self) -> int:
        return len(self.encode_local(self.local_reset(0), 0))

    def check_agent(self, agent: AgentId) -> None:
        if not 0 <= agent < self.n_agents:
            raise ContractViolation(
                f"agent id {agent} outside [0, {self.n_agents})"
            )
