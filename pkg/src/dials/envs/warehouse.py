"""Warehouse commissioning environment.

A grid of grid_side x grid_side robots, each confined to its own 5x5
region; regions overlap so that each of the 12 shelf cells (the
non-corner boundary cells) on a robot's four edges is shared with
exactly one neighbouring robot.  Items appear on empty shelf cells with
a fixed probability and are collected by standing on them.

Step order (global simulator): robots move (moves leaving the region are
no-ops), then collections are resolved in increasing agent index (so the
lower index wins a simultaneous claim on a shared cell), then empty
shelf cells spawn items.

The local simulator mirrors the same dynamics inside one region.  Its
influence-source value places each of the four neighbours on one of the
three shared cells of the corresponding edge (or absent); a claimed cell
loses its item without reward unless this robot stands there and wins
the index tie-break.  A claim on a boundary edge (no real neighbour,
possible when the claim comes from an untrained predictor) removes the
item but loses ties.

Robots may co-occupy shared cells; there is no collision rule.  Reset is
deterministic: robots at their region centres, no items.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ContractViolation, EnvironmentContract

# actions
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
# edges in order north, east, south, west
_EDGE_NAMES = ("N", "E", "S", "W")
_EDGE_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class WarehouseConfig:
    grid_side: int = 2
    item_prob: float = 0.02
    horizon: int = 100
    reward_per_item: float = 1.0


@dataclass(frozen=True)
class WarehouseState:
    positions: tuple          # ((row, col), ...) absolute board coordinates
    items: np.ndarray         # uint8 over global shelf-cell index

    def copy_items(self) -> np.ndarray:
        return self.items.copy()


def _edge_cells(origin_r: int, origin_c: int):
    """Absolute coordinates of the 12 shelf cells, edge by edge."""
    cells = {
        "N": [(origin_r, origin_c + k) for k in (1, 2, 3)],
        "E": [(origin_r + k, origin_c + 4) for k in (1, 2, 3)],
        "S": [(origin_r + 4, origin_c + k) for k in (1, 2, 3)],
        "W": [(origin_r + k, origin_c) for k in (1, 2, 3)],
    }
    return cells


class WarehouseEnv(EnvironmentContract):
    def __init__(self, cfg: WarehouseConfig):
        self.cfg = cfg
        g = cfg.grid_side
        self.n_agents = g * g
        self.horizon = cfg.horizon
        self.board_side = 4 * g + 1
        self.region_origin = []
        self.region_cells = []       # [agent] -> list of 12 absolute cells (N,E,S,W x 3)
        cell_ids: dict = {}
        for r in range(g):
            for c in range(g):
                origin = (4 * r, 4 * c)
                self.region_origin.append(origin)
                cells = _edge_cells(*origin)
                ordered = [cell for e in _EDGE_NAMES for cell in cells[e]]
                self.region_cells.append(ordered)
                for cell in ordered:
                    cell_ids.setdefault(cell, len(cell_ids))
        self.cell_index = cell_ids
        self.n_shelf_cells = len(cell_ids)
        self.region_cell_ids = [
            np.array([cell_ids[c] for c in cells], dtype=int)
            for cells in self.region_cells
        ]
        # neighbour agent index per edge, None at the warehouse boundary
        self.neighbors = []
        for r in range(g):
            for c in range(g):
                nb = []
                for e, (dr, dc) in zip(_EDGE_NAMES, _EDGE_DELTAS):
                    rr, cc = r + dr, c + dc
                    nb.append(rr * g + cc if 0 <= rr < g and 0 <= cc < g else None)
                self.neighbors.append(nb)
        # relative shelf-cell coordinates inside the 5x5 region (edge-major)
        rel = _edge_cells(0, 0)
        self.rel_cells = [cell for e in _EDGE_NAMES for cell in rel[e]]
        self.rel_cell_slot = {cell: k for k, cell in enumerate(self.rel_cells)}

    # -- global simulator ------------------------------------------------------

    def reset(self, rng=None) -> WarehouseState:
        g = self.cfg.grid_side
        positions = tuple(
            (4 * r + 2, 4 * c + 2) for r in range(g) for c in range(g)
        )
        return WarehouseState(positions, np.zeros(self.n_shelf_cells, dtype=np.uint8))

    def _move(self, agent: int, pos, action: int):
        dr, dc = _DELTAS[action]
        nr, nc = pos[0] + dr, pos[1] + dc
        orr, occ = self.region_origin[agent]
        if orr <= nr <= orr + 4 and occ <= nc <= occ + 4:
            return (nr, nc)
        return pos

    def step_global(self, state: WarehouseState, joint_action, rng):
        n = self.n_agents
        if len(joint_action) != n:
            raise ContractViolation(
                f"joint action length {len(joint_action)} != {n} agents")
        positions = [self._move(i, state.positions[i], joint_action[i])
                     for i in range(n)]
        items = state.items.copy()
        rewards = np.zeros(n)
        for i in range(n):  # increasing index: lower index wins shared claims
            idx = self.cell_index.get(positions[i])
            if idx is not None and items[idx]:
                items[idx] = 0
                rewards[i] = self.cfg.reward_per_item
        spawn = rng.random(self.n_shelf_cells) < self.cfg.item_prob
        items |= (spawn & (items == 0)).astype(np.uint8)
        return WarehouseState(tuple(positions), items), rewards

    # -- projections -----------------------------------------------------------

    def extract_local(self, state: WarehouseState, agent: int):
        self.check_agent(agent)
        orr, occ = self.region_origin[agent]
        pr, pc = state.positions[agent]
        bits = state.items[self.region_cell_ids[agent]]
        return (pr - orr, pc - occ) + tuple(int(b) for b in bits)

    def extract_influence_sources(self, state: WarehouseState, agent: int):
        self.check_agent(agent)
        comps = []
        for e in range(4):
            j = self.neighbors[agent][e]
            comp = 0
            if j is not None:
                pos_j = state.positions[j]
                cells = self.region_cells[agent][3 * e:3 * e + 3]
                for k, cell in enumerate(cells):
                    if pos_j == cell:
                        comp = k + 1
                        break
            comps.append(comp)
        return tuple(comps)

    # -- local simulator ---------------------------------------------------------

    def local_reset(self, agent: int):
        return (2, 2) + (0,) * 12

    def local_step(self, x, action: int, u, rng, agent: int):
        pr, pc = x[0], x[1]
        bits = list(x[2:14])
        dr, dc = _DELTAS[action]
        nr, nc = pr + dr, pc + dc
        if not (0 <= nr <= 4 and 0 <= nc <= 4):
            nr, nc = pr, pc
        pos = (nr, nc)
        reward = 0.0
        # neighbour claims from the influence value, then own collection
        for e in range(4):
            comp = u[e]
            if comp == 0:
                continue
            slot = 3 * e + (comp - 1)
            if not bits[slot]:
                continue
            cell = self.rel_cells[slot]
            j = self.neighbors[agent][e]
            own_wins = pos == cell and (j is None or agent < j)
            bits[slot] = 0
            if own_wins:
                reward += self.cfg.reward_per_item
        slot = self.rel_cell_slot.get(pos)
        if slot is not None and bits[slot]:
            bits[slot] = 0
            reward += self.cfg.reward_per_item
        spawn = rng.random(12) < self.cfg.item_prob
        for k in range(12):
            if not bits[k] and spawn[k]:
                bits[k] = 1
        return pos + tuple(bits), reward

    def local_reward(self, x, action: int, agent: int) -> float:
        pr, pc = x[0], x[1]
        dr, dc = _DELTAS[action]
        nr, nc = pr + dr, pc + dc
        if not (0 <= nr <= 4 and 0 <= nc <= 4):
            nr, nc = pr, pc
        slot = self.rel_cell_slot.get((nr, nc))
        if slot is not None and x[2 + slot]:
            return self.cfg.reward_per_item
        return 0.0

    # -- sizes and encodings -----------------------------------------------------

    def n_actions(self, agent: int) -> int:
        return 4

    def influence_domains(self, agent: int):
        return [4, 4, 4, 4]

    def encode_local(self, x, agent: int) -> np.ndarray:
        out = np.zeros(37)
        out[5 * x[0] + x[1]] = 1.0
        out[25:37] = x[2:14]
        return out
