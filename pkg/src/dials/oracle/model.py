"""Tiny tabular local-form games for exact verification.

A model is a two-slice DBN over named finite-domain variables plus, per
agent, designated local variables, influence-source variables, an
observation table over local states and a reward table.  Everything else
is that agent's external region.  Sizes are capped so that brute-force
trajectory enumeration stays under seconds.

Structural requirement (checked at construction): a local variable of
agent i may only have parents in X_i, U_i and agent i's own action, so
the external region and the other agents' actions reach the local region
exclusively through the influence sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

ROW_SUM_TOL = 1e-12
MAX_STATES = 512
MAX_HORIZON = 5
MAX_AGENTS = 3


class StructureError(ValueError):
    """Model violates a structural requirement."""


@dataclass
class Variable:
    name: str
    domain: int
    parents: list  # names of previous-slice variables and actions ("a0", "a1", ...)
    cpt: np.ndarray  # (prod(parent domains), domain)
    init: np.ndarray  # (domain,)


@dataclass
class AgentSpec:
    n_actions: int
    n_observations: int
    local: list
    sources: list
    obs_table: np.ndarray  # (n_local_states, n_observations)
    reward_table: np.ndarray  # (n_local_states, n_actions)


def _check_rows(name: str, table: np.ndarray) -> None:
    if np.any(table < -1e-15):
        raise ValueError(f"{name}: negative probability entry")
    sums = table.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise ValueError(f"{name}: rows must sum to 1 (worst {sums.min()}..{sums.max()})")


class TabularFposg:
    def __init__(self, variables: list[Variable], agents: list[AgentSpec],
                 horizon: int, name: str = "toy"):
        self.name = name
        self.variables = variables
        self.agents = agents
        self.horizon = horizon
        self.var_names = [v.name for v in variables]
        self.var_index = {v.name: k for k, v in enumerate(variables)}
        self.domains = np.array([v.domain for v in variables])
        self.n_states = int(np.prod(self.domains))
        self.n_agents = len(agents)
        self._validate()
        self._build_tables()

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        if self.n_agents < 1 or self.n_agents > MAX_AGENTS:
            raise ValueError(f"need 1..{MAX_AGENTS} agents, got {self.n_agents}")
        if not 1 <= self.horizon <= MAX_HORIZON:
            raise ValueError(f"horizon must be in [1, {MAX_HORIZON}], got {self.horizon}")
        if self.n_states > MAX_STATES:
            raise ValueError(f"|S| = {self.n_states} exceeds cap {MAX_STATES}")
        if len(set(self.var_names)) != len(self.var_names):
            raise ValueError("duplicate variable names")
        action_names = {f"a{i}" for i in range(self.n_agents)}
        for v in self.variables:
            n_rows = 1
            for p in v.parents:
                if p in self.var_index:
                    n_rows *= self.variables[self.var_index[p]].domain
                elif p in action_names:
                    n_rows *= self.agents[int(p[1:])].n_actions
                else:
                    raise ValueError(f"variable {v.name}: unknown parent {p!r}")
            if v.cpt.shape != (n_rows, v.domain):
                raise ValueError(
                    f"variable {v.name}: cpt shape {v.cpt.shape} != {(n_rows, v.domain)}"
                )
            _check_rows(f"cpt[{v.name}]", v.cpt)
            if v.init.shape != (v.domain,):
                raise ValueError(f"variable {v.name}: bad init shape")
            _check_rows(f"init[{v.name}]", v.init[None, :])
        for i, ag in enumerate(self.agents):
            for name in ag.local + ag.sources:
                if name not in self.var_index:
                    raise ValueError(f"agent {i}: unknown variable {name!r}")
            overlap = set(ag.local) & set(ag.sources)
            if overlap:
                raise StructureError(f"agent {i}: sources overlap local vars: {overlap}")
            allowed = set(ag.local) | set(ag.sources) | {f"a{i}"}
            for name in ag.local:
                v = self.variables[self.var_index[name]]
                bad = [p for p in v.parents if p not in allowed]
                if bad:
                    raise StructureError(
                        f"agent {i}: local variable {name} has parents {bad} outside "
                        f"X_i, U_i and a{i}; influence sources do not d-separate"
                    )
            n_local = int(np.prod([self.variables[self.var_index[n]].domain for n in ag.local]))
            if ag.obs_table.shape != (n_local, ag.n_observations):
                raise ValueError(f"agent {i}: obs_table shape {ag.obs_table.shape}")
            _check_rows(f"obs[{i}]", ag.obs_table)
            if ag.reward_table.shape != (n_local, ag.n_actions):
                raise ValueError(f"agent {i}: reward_table shape {ag.reward_table.shape}")

    # -- dense tables -------------------------------------------------------

    def _build_tables(self) -> None:
        doms = self.domains
        n_vars = len(self.variables)
        self.action_sizes = [a.n_actions for a in self.agents]
        self.n_joint_actions = int(np.prod(self.action_sizes))
        # state tuples in index order
        self.state_tuples = np.stack(
            np.unravel_index(np.arange(self.n_states), doms), axis=1
        )
        # initial distribution (variables independent at t=0)
        b0 = np.ones(self.n_states)
        for k, v in enumerate(self.variables):
            b0 *= v.init[self.state_tuples[:, k]]
        self.b0 = b0
        # per-agent projections
        self._local_idx = []
        self._source_idx = []
        self.n_local_states = []
        self.n_source_values = []
        for ag in self.agents:
            lv = [self.var_index[n] for n in ag.local]
            sv = [self.var_index[n] for n in ag.sources]
            self._local_idx.append(lv)
            self._source_idx.append(sv)
            ldoms = doms[lv]
            sdoms = doms[sv]
            self.n_local_states.append(int(np.prod(ldoms)) if len(lv) else 1)
            self.n_source_values.append(int(np.prod(sdoms)) if len(sv) else 1)
        self.local_of_state = np.stack(
            [self._project(np.arange(self.n_states), i, local=True)
             for i in range(self.n_agents)], axis=1)
        self.source_of_state = np.stack(
            [self._project(np.arange(self.n_states), i, local=False)
             for i in range(self.n_agents)], axis=1)
        # dense joint transition T[s, a_joint, s']
        self.T = np.zeros((self.n_states, self.n_joint_actions, self.n_states))
        per_var_dist = np.zeros((n_vars, self.n_states, self.n_joint_actions,
                                 max(doms)))
        joint_actions = np.stack(
            np.unravel_index(np.arange(self.n_joint_actions), self.action_sizes), axis=1
        ) if self.n_joint_actions > 1 else np.zeros((1, self.n_agents), dtype=int)
        self.joint_action_tuples = joint_actions
        for k, v in enumerate(self.variables):
            rows = self._cpt_rows(v, joint_actions)  # (n_states, n_joint_actions)
            per_var_dist[k, :, :, :v.domain] = v.cpt[rows]
        for s in range(self.n_states):
            for a in range(self.n_joint_actions):
                dist = per_var_dist[0, s, a, :doms[0]]
                for k in range(1, n_vars):
                    dist = np.multiply.outer(dist, per_var_dist[k, s, a, :doms[k]])
                self.T[s, a, :] = dist.reshape(-1)
        # per-agent local transition Tdot[x, u, a_i, x'], exact thanks to the
        # structural parent restriction
        self.Tdot = []
        for i, ag in enumerate(self.agents):
            lv = self._local_idx[i]
            sv = self._source_idx[i]
            ldoms = list(doms[lv])
            sdoms = list(doms[sv])
            nl, nu = self.n_local_states[i], self.n_source_values[i]
            td = np.zeros((nl, nu, ag.n_actions, nl))
            locals_ = np.stack(np.unravel_index(np.arange(nl), ldoms), axis=1) \
                if nl > 1 else np.zeros((1, len(lv)), dtype=int)
            sources = np.stack(np.unravel_index(np.arange(nu), sdoms), axis=1) \
                if nu > 1 else np.zeros((1, len(sv)), dtype=int)
            name_to_pos = {}
            for pos, n in enumerate(ag.local):
                name_to_pos[n] = ("x", pos)
            for pos, n in enumerate(ag.sources):
                name_to_pos[n] = ("u", pos)
            for xi in range(nl):
                for ui in range(nu):
                    for ai in range(ag.n_actions):
                        dist = np.array([1.0])
                        for pos, name in enumerate(ag.local):
                            v = self.variables[self.var_index[name]]
                            ass = []
                            for p in v.parents:
                                if p == f"a{i}":
                                    ass.append(ai)
                                else:
                                    kind, ppos = name_to_pos[p]
                                    ass.append(locals_[xi][ppos] if kind == "x"
                                               else sources[ui][ppos])
                            row = v.cpt[self._row_index(v, ass)]
                            dist = np.multiply.outer(dist, row)
                        td[xi, ui, ai, :] = dist.reshape(-1)
            self.Tdot.append(td)
        self.max_abs_reward = max(
            float(np.max(np.abs(ag.reward_table))) for ag in self.agents
        )

    def _row_index(self, v: Variable, assignment) -> int:
        dims = []
        for p in v.parents:
            if p in self.var_index:
                dims.append(self.variables[self.var_index[p]].domain)
            else:
                dims.append(self.agents[int(p[1:])].n_actions)
        if not dims:
            return 0
        return int(np.ravel_multi_index(tuple(assignment), tuple(dims)))

    def _cpt_rows(self, v: Variable, joint_actions) -> np.ndarray:
        """Row index per (state, joint action)."""
        rows = np.zeros((self.n_states, len(joint_actions)), dtype=int)
        dims = []
        cols = []
        for p in v.parents:
            if p in self.var_index:
                dims.append(self.variables[self.var_index[p]].domain)
                cols.append(("v", self.var_index[p]))
            else:
                j = int(p[1:])
                dims.append(self.agents[j].n_actions)
                cols.append(("a", j))
        for si in range(self.n_states):
            for aj in range(len(joint_actions)):
                ass = [
                    self.state_tuples[si, idx] if kind == "v" else joint_actions[aj, idx]
                    for kind, idx in cols
                ]
                rows[si, aj] = int(np.ravel_multi_index(tuple(ass), tuple(dims))) if dims else 0
        return rows

    def _project(self, states, agent: int, local: bool) -> np.ndarray:
        idx = self._local_idx[agent] if local else self._source_idx[agent]
        if not idx:
            return np.zeros(len(np.atleast_1d(states)), dtype=int)
        doms = tuple(self.domains[idx])
        vals = self.state_tuples[np.atleast_1d(states)][:, idx]
        return np.ravel_multi_index(tuple(vals.T), doms)

    # -- public projections ---------------------------------------------------

    def local_state(self, s: int, agent: int) -> int:
        return int(self.local_of_state[s, agent])

    def source_value(self, s: int, agent: int) -> int:
        return int(self.source_of_state[s, agent])

    def joint_action_index(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(actions), tuple(self.action_sizes)))

    def transition_independent(self, agent: int) -> bool:
        """True if the agent's influence-source chain is closed under
        X_i, U_i and the agent's own action (Corollary-style independence)."""
        ag = self.agents[agent]
        allowed = set(ag.local) | set(ag.sources) | {f"a{agent}"}
        for name in ag.sources:
            v = self.variables[self.var_index[name]]
            if any(p not in allowed for p in v.parents):
                return False
        return True

    # -- sampling -------------------------------------------------------------

    def sample_initial(self, rng) -> int:
        return int(rng.choice(self.n_states, p=self.b0))

    def sample_step(self, s: int, actions, rng) -> int:
        a = self.joint_action_index(actions)
        return int(rng.choice(self.n_states, p=self.T[s, a]))

    def sample_observation(self, s: int, agent: int, rng) -> int:
        x = self.local_state(s, agent)
        return int(rng.choice(self.agents[agent].n_observations,
                              p=self.agents[agent].obs_table[x]))

    def reward(self, s: int, agent: int, action: int) -> float:
        return float(self.agents[agent].reward_table[self.local_state(s, agent), action])


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

FILE_VERSION = 1


def save_model(model: TabularFposg, path) -> None:
    doc = {
        "version": FILE_VERSION,
        "name": model.name,
        "horizon": model.horizon,
        "variables": [
            {
                "name": v.name,
                "domain": int(v.domain),
                "parents": list(v.parents),
                "init": [float(p) for p in v.init],
                "cpt": [[float(p) for p in row] for row in v.cpt],
            }
            for v in model.variables
        ],
        "agents": [
            {
                "actions": int(a.n_actions),
                "observations": int(a.n_observations),
                "local": list(a.local),
                "sources": list(a.sources),
                "obs_table": [[float(p) for p in row] for row in a.obs_table],
                "reward_table": [[float(p) for p in row] for row in a.reward_table],
            }
            for a in model.agents
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def _require(doc, key, types, ctx):
    if key not in doc:
        raise ValueError(f"model file: missing {ctx}{key!r}")
    val = doc[key]
    if not isinstance(val, types):
        raise ValueError(f"model file: {ctx}{key!r} has wrong type {type(val).__name__}")
    return val


def load_model(path) -> TabularFposg:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError("model file: top level must be a mapping")
    version = _require(doc, "version", int, "")
    if version != FILE_VERSION:
        raise ValueError(f"model file: unsupported version {version}")
    name = doc.get("name", "model")
    horizon = _require(doc, "horizon", int, "")
    variables = []
    for k, vdoc in enumerate(_require(doc, "variables", list, "")):
        ctx = f"variables[{k}]."
        variables.append(Variable(
            name=_require(vdoc, "name", str, ctx),
            domain=_require(vdoc, "domain", int, ctx),
            parents=list(_require(vdoc, "parents", list, ctx)),
            cpt=np.asarray(_require(vdoc, "cpt", list, ctx), dtype=float),
            init=np.asarray(_require(vdoc, "init", list, ctx), dtype=float),
        ))
    agents = []
    for k, adoc in enumerate(_require(doc, "agents", list, "")):
        ctx = f"agents[{k}]."
        agents.append(AgentSpec(
            n_actions=_require(adoc, "actions", int, ctx),
            n_observations=_require(adoc, "observations", int, ctx),
            local=list(_require(adoc, "local", list, ctx)),
            sources=list(_require(adoc, "sources", list, ctx)),
            obs_table=np.asarray(_require(adoc, "obs_table", list, ctx), dtype=float),
            reward_table=np.asarray(_require(adoc, "reward_table", list, ctx), dtype=float),
        ))
    return TabularFposg(variables, agents, horizon, name=name)


# ---------------------------------------------------------------------------
# toy generators
# ---------------------------------------------------------------------------


def _rows(rng, n_rows, domain, alpha=1.0, deterministic=False):
    if deterministic:
        out = np.zeros((n_rows, domain))
        out[np.arange(n_rows), rng.integers(0, domain, size=n_rows)] = 1.0
        return out
    return rng.dirichlet(alpha * np.ones(domain), size=n_rows)


def random_toy(seed: int, horizon: int = 3, coupled: bool = True,
               x_domain: int = 2, u_domain: int = 2, obs_domain: int = 2,
               n_actions: int = 2, alpha: float = 1.0,
               deterministic: bool = False, reward_scale: float = 1.0,
               identity_obs: bool = False) -> TabularFposg:
    """Two-agent toy.

    coupled=True: each agent's influence source is the other agent's local
    variable, whose dynamics depend on that agent's action.
    coupled=False: both agents' influence source is an autonomous external
    chain, so the influence distribution is policy-independent.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xD1A])))
    variables = []
    if coupled:
        # x0 <- (x0, x1, a0); x1 <- (x1, x0, a1); U_0 = {x1}, U_1 = {x0}
        variables.append(Variable(
            "x0", x_domain, ["x0", "x1", "a0"],
            _rows(rng, x_domain * u_domain * n_actions, x_domain, alpha, deterministic),
            _rows(rng, 1, x_domain, alpha, deterministic)[0]))
        variables.append(Variable(
            "x1", u_domain, ["x1", "x0", "a1"],
            _rows(rng, u_domain * x_domain * n_actions, u_domain, alpha, deterministic),
            _rows(rng, 1, u_domain, alpha, deterministic)[0]))
        locals_ = (["x0"], ["x1"])
        sources = (["x1"], ["x0"])
        x_domains = (x_domain, u_domain)
    else:
        # autonomous external chain e feeds both local regions
        variables.append(Variable(
            "e", u_domain, ["e"],
            _rows(rng, u_domain, u_domain, alpha, deterministic),
            _rows(rng, 1, u_domain, alpha, deterministic)[0]))
        for i in range(2):
            variables.append(Variable(
                f"x{i}", x_domain, [f"x{i}", "e", f"a{i}"],
                _rows(rng, x_domain * u_domain * n_actions, x_domain, alpha, deterministic),
                _rows(rng, 1, x_domain, alpha, deterministic)[0]))
        locals_ = (["x0"], ["x1"])
        sources = (["e"], ["e"])
        x_domains = (x_domain, x_domain)
    agents = []
    for i in range(2):
        nl = x_domains[i]
        if identity_obs:
            obs_table = np.eye(nl)
        else:
            obs_table = _rows(rng, nl, obs_domain, alpha, deterministic)
        agents.append(AgentSpec(
            n_actions=n_actions,
            n_observations=nl if identity_obs else obs_domain,
            local=locals_[i],
            sources=sources[i],
            obs_table=obs_table,
            reward_table=reward_scale * rng.uniform(-1.0, 1.0, size=(nl, n_actions)),
        ))
    kind = "coupled" if coupled else "independent"
    return TabularFposg(variables, agents, horizon, name=f"{kind}-toy-{seed}")


def coupled_toy(seed: int, **kw) -> TabularFposg:
    return random_toy(seed, coupled=True, **kw)


def independent_toy(seed: int, **kw) -> TabularFposg:
    return random_toy(seed, coupled=False, **kw)
