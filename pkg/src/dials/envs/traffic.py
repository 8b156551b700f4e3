"""Slot-based traffic-signal environment.

A grid of signalized intersections.  Each intersection has four incoming
and four outgoing lane segments of ``lane_length`` slots; cars travel
straight through.  Slot L-1 of an incoming lane is its entry head, slot
0 the stop line; outgoing slot 0 is at the intersection, slot L-1 the
exit.  A car at an outgoing exit always leaves the local region this
step; it reappears at the downstream intersection's incoming head if
that slot is free, otherwise it is dropped (keeping the hand-off flags
the only influence channel between regions).  Boundary feeder segments
outside the network spawn cars and feed edge intersections the same way.

The influence-source value is one binary flag per incoming lane: whether
the upstream exit slot holds a car poised to enter.  The local simulator
is fully deterministic given (local state, action, flags).

Reward per step: cars moved inside the region divided by
max(1, cars present at the start of the step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ContractViolation, EnvironmentContract

KEEP, SWITCH = 0, 1
# incoming-lane sides in order north, east, south, west; a car on side d
# crosses to the outgoing lane on the opposite side
_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
NS_GREEN, EW_GREEN = 0, 1


def _green(phase: int, side: int) -> bool:
    return (side % 2 == 0) == (phase == NS_GREEN)


@dataclass(frozen=True)
class TrafficConfig:
    grid_side: int = 2
    lane_length: int = 4
    boundary_length: int = 4
    spawn_prob: float = 0.3
    horizon: int = 100


@dataclass(frozen=True)
class TrafficState:
    inc: np.ndarray      # (n, 4, L) uint8
    out: np.ndarray      # (n, 4, L) uint8
    phase: np.ndarray    # (n,) uint8
    feeder: np.ndarray   # (n, 4, Lb) uint8, used only on boundary sides


class TrafficEnv(EnvironmentContract):
    def __init__(self, cfg: TrafficConfig):
        self.cfg = cfg
        g = cfg.grid_side
        self.n_agents = g * g
        self.horizon = cfg.horizon
        self.L = cfg.lane_length
        self.Lb = cfg.boundary_length
        # upstream neighbour per (agent, side): agent index or None (boundary)
        self.upstream = []
        for r in range(g):
            for c in range(g):
                row = []
                for d, (dr, dc) in enumerate(_DELTAS):
                    rr, cc = r + dr, c + dc
                    row.append(rr * g + cc if 0 <= rr < g and 0 <= cc < g else None)
                self.upstream.append(row)

    # -- global simulator ------------------------------------------------------

    def reset(self, rng=None) -> TrafficState:
        n, L, Lb = self.n_agents, self.L, self.Lb
        return TrafficState(
            inc=np.zeros((n, 4, L), dtype=np.uint8),
            out=np.zeros((n, 4, L), dtype=np.uint8),
            phase=np.zeros(n, dtype=np.uint8),
            feeder=np.zeros((n, 4, Lb), dtype=np.uint8),
        )

    @staticmethod
    def _advance_region(inc, out, phase):
        """In-place movement for one intersection; returns cars moved."""
        L = inc.shape[1]
        moved = 0
        for d in range(4):
            lane = out[d]
            if lane[L - 1]:
                lane[L - 1] = 0  # exits the region (hand-off or network exit)
                moved += 1
            for k in range(L - 2, -1, -1):
                if lane[k] and not lane[k + 1]:
                    lane[k + 1] = 1
                    lane[k] = 0
                    moved += 1
        for d in range(4):
            lane = inc[d]
            if lane[0] and _green(phase, d) and not out[(d + 2) % 4][0]:
                lane[0] = 0
                out[(d + 2) % 4][0] = 1
                moved += 1
            for k in range(1, L):
                if lane[k] and not lane[k - 1]:
                    lane[k - 1] = 1
                    lane[k] = 0
                    moved += 1
        return moved

    def step_global(self, state: TrafficState, joint_action, rng):
        n = self.n_agents
        if len(joint_action) != n:
            raise ContractViolation(
                f"joint action length {len(joint_action)} != {n} agents")
        flags = [self.extract_influence_sources(state, i) for i in range(n)]
        inc = state.inc.copy()
        out = state.out.copy()
        feeder = state.feeder.copy()
        phase = state.phase.copy()
        rewards = np.zeros(n)
        present = inc.sum(axis=(1, 2)) + out.sum(axis=(1, 2))
        for i in range(n):
            if joint_action[i] == SWITCH:
                phase[i] ^= 1
            moved = self._advance_region(inc[i], out[i], int(phase[i]))
            rewards[i] = moved / max(1, int(present[i]))
        L, Lb = self.L, self.Lb
        for i in range(n):
            for d in range(4):
                if flags[i][d] and not inc[i, d, L - 1]:
                    inc[i, d, L - 1] = 1
        # boundary feeders: exit car left (delivered or dropped), advance, spawn
        for i in range(n):
            for d in range(4):
                if self.upstream[i][d] is not None:
                    continue
                lane = feeder[i, d]
                lane[Lb - 1] = 0
                for k in range(Lb - 2, -1, -1):
                    if lane[k] and not lane[k + 1]:
                        lane[k + 1] = 1
                        lane[k] = 0
                if not lane[0] and rng.random() < self.cfg.spawn_prob:
                    lane[0] = 1
        return TrafficState(inc, out, phase, feeder), rewards

    # -- projections -----------------------------------------------------------

    def extract_local(self, state: TrafficState, agent: int):
        self.check_agent(agent)
        return tuple(int(b) for b in state.inc[agent].reshape(-1)) + \
            tuple(int(b) for b in state.out[agent].reshape(-1)) + \
            (int(state.phase[agent]),)

    def extract_influence_sources(self, state: TrafficState, agent: int):
        self.check_agent(agent)
        L, Lb = self.L, self.Lb
        comps = []
        for d in range(4):
            j = self.upstream[agent][d]
            if j is None:
                comps.append(int(state.feeder[agent, d, Lb - 1]))
            else:
                comps.append(int(state.out[j, (d + 2) % 4, L - 1]))
        return tuple(comps)

    # -- local simulator ---------------------------------------------------------

    def local_reset(self, agent: int):
        return (0,) * (8 * self.L) + (0,)

    def local_step(self, x, action: int, u, rng, agent: int):
        L = self.L
        inc = np.array(x[:4 * L], dtype=np.uint8).reshape(4, L)
        out = np.array(x[4 * L:8 * L], dtype=np.uint8).reshape(4, L)
        phase = x[8 * L]
        if action == SWITCH:
            phase ^= 1
        present = int(inc.sum() + out.sum())
        moved = self._advance_region(inc, out, phase)
        for d in range(4):
            if u[d] and not inc[d, L - 1]:
                inc[d, L - 1] = 1
        reward = moved / max(1, present)
        x2 = tuple(int(b) for b in inc.reshape(-1)) + \
            tuple(int(b) for b in out.reshape(-1)) + (int(phase),)
        return x2, reward

    def local_reward(self, x, action: int, agent: int) -> float:
        x2, reward = self.local_step(x, action, (0, 0, 0, 0), None, agent)
        return reward

    # -- sizes and encodings -----------------------------------------------------

    def n_actions(self, agent: int) -> int:
        return 2

    def influence_domains(self, agent: int):
        return [2, 2, 2, 2]

    def encode_local(self, x, agent: int) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)
