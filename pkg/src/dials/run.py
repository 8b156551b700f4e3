"""End-to-end training runs.

The DIALS loop: collect influence datasets from the global simulator
under the current joint policy, retrain the influence predictors in
parallel, then let every agent train independently on its own
influence-augmented local simulator for F steps, and repeat.  Baselines:
all agents learning together on the global simulator, and DIALS with
permanently untrained (exactly uniform) predictors.

Evaluation runs on the global simulator with frozen policies (stochastic
action sampling) every ``eval_every`` per-agent steps; the same episodes
score each predictor's cross-entropy.  Phases are wall-clock timed
between barriers.

Every random draw comes from a substream keyed by (seed, purpose, agent),
carried inside the per-agent session objects, so metrics are bit-identical
for any worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import aip as aip_mod
from . import ppo as ppo_mod
from .envs import make_env
from .rng import stream

MODES = ("dials", "gs", "untrained")
ENVS = ("warehouse", "traffic")
PHASE_COLLECT = "collect"
PHASE_AIP = "train_aip"
PHASE_AGENTS = "train_agents"
PHASE_EVAL = "eval"

CSV_COLUMNS = ["global_step", "agent_id", "eval_return", "eval_se",
               "aip_ce", "phase", "wall_s"]


@dataclass
class RunConfig:
    env: str = "warehouse"
    grid_side: int = 2
    mode: str = "dials"
    F: int = 20_000
    total_steps: int = 200_000
    eval_every: int = 10_000
    eval_episodes: int = 10
    seed: int = 0
    worker_count: int = 1
    out_dir: str | None = None
    horizon: int = 100
    aip_dataset_size: int = 10_000

    def __post_init__(self):
        if self.env not in ENVS:
            raise ValueError(f"env must be one of {ENVS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.total_steps > 0 and self.F > self.total_steps:
            raise ValueError("F must not exceed total_steps")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")

    @property
    def rounds(self) -> int:
        return math.ceil(self.total_steps / self.F) if self.total_steps else 0


@dataclass
class RunMetrics:
    config: dict
    rows: list = field(default_factory=list)
    breakdown: dict = field(default_factory=dict)
    aip_hashes: dict = field(default_factory=dict)
    rounds_run: int = 0

    def eval_rows(self):
        return [r for r in self.rows if r["phase"] == PHASE_EVAL]


# ---------------------------------------------------------------------------
# per-agent training sessions
# ---------------------------------------------------------------------------


class AgentSession:
    """One agent's local simulator, policy learner and (frozen) predictor.

    Self-contained and picklable: travels to a worker process, trains for
    a chunk of steps, and comes back with advanced RNG state.
    """

    def __init__(self, cfg: RunConfig, agent: int):
        self.agent = agent
        self.env = make_env(cfg.env, cfg.grid_side, horizon=cfg.horizon)
        # single precision in the training hot path; the nn contracts and
        # gradient checks run in the float64 default
        policy = ppo_mod.default_policy_model(
            cfg.env, self.env.obs_dim, self.env.n_actions(agent),
            seed=_entropy32(cfg.seed, "policy-init", agent), dtype=np.float32)
        self.learner = ppo_mod.PpoLearner(policy, ppo_mod.default_ppo_config(cfg.env))
        self.aip = aip_mod.default_aip_model(
            self.env, agent, seed=_entropy32(cfg.seed, "aip-init", agent),
            dtype=np.float32)
        if cfg.mode == "untrained":
            self.aip.pv.data[:] = 0.0
        self.sim_rng = stream(cfg.seed, "ials-sim", agent)
        self.update_rng = stream(cfg.seed, "ials-update", agent)
        self.steps_done = 0
        self._reset_episode()

    def _reset_episode(self):
        self.x = self.env.local_reset(self.agent)
        self.ep_step = 0
        self.policy_hidden = self.learner.policy.initial_state()
        self.aip_hidden = self.aip.initial_state()
        self.prev_action = None

    def train_steps(self, n_steps: int) -> None:
        env, agent = self.env, self.agent
        learner, policy, aip_model = self.learner, self.learner.policy, self.aip
        buf = learner.buffer
        for _ in range(n_steps):
            start = self.ep_step == 0
            pre_hidden = self.policy_hidden
            obs = env.encode_local(self.x, agent)
            token = policy.token(obs, self.prev_action)
            a, logp, value, self.policy_hidden = policy.act(
                token, self.policy_hidden, self.sim_rng)
            aip_token = aip_mod.make_token(env, agent, self.x, self.prev_action)
            u, self.aip_hidden = aip_model.sample_sources(
                aip_token, self.aip_hidden, self.sim_rng)
            x2, reward = env.local_step(self.x, a, u, self.sim_rng, agent)
            self.ep_step += 1
            done = self.ep_step >= env.horizon
            buf.add(token, a, logp, reward, value, done, start, pre_hidden)
            self.x = x2
            self.prev_action = a
            self.steps_done += 1
            if buf.full:
                if done:
                    bootstrap = 0.0
                else:
                    nxt = policy.token(env.encode_local(self.x, agent), a)
                    bootstrap = policy.value(nxt, self.policy_hidden)
                learner.update(bootstrap, self.update_rng)
            if done:
                self._reset_episode()

    def aip_hash(self) -> str:
        return self.aip.param_hash()


def _entropy32(seed: int, tag: str, agent: int) -> int:
    return int(stream(seed, tag, agent).integers(0, 2 ** 31 - 1))


# worker entry points (module level for pickling)

def _work_train_chunk(args):
    session, n_steps = args
    t0 = time.perf_counter()
    session.train_steps(n_steps)
    return session, time.perf_counter() - t0


def _work_train_aip(args):
    session, dataset, cfg, seed, round_idx = args
    t0 = time.perf_counter()
    train_cfg = aip_mod.default_train_config(session.aip.arch)
    train_cfg.dataset_size = cfg.aip_dataset_size
    rng = stream(seed, "aip-train", session.agent, round_idx)
    aip_mod.aip_train(session.aip, session.env, dataset, train_cfg, rng)
    return session, time.perf_counter() - t0


class _Pool:
    """Map helper: inline when worker_count == 1, process pool otherwise."""

    def __init__(self, workers: int):
        self.workers = workers
        self._pool = None
        if workers > 1:
            import multiprocessing as mp
            self._pool = mp.get_context("fork").Pool(workers)

    def map(self, fn, items):
        if self._pool is None:
            return [fn(it) for it in items]
        return self._pool.map(fn, items, chunksize=1)

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()


# ---------------------------------------------------------------------------
# joint-policy helpers
# ---------------------------------------------------------------------------


class PolicyActor:
    """Frozen joint policy acting on the global simulator."""

    def __init__(self, env, policies):
        self.env = env
        self.policies = policies
        self.reset_episode()

    def reset_episode(self):
        self.hidden = [p.initial_state() for p in self.policies]
        self.prev = [None] * len(self.policies)

    def act(self, agent: int, obs: np.ndarray, rng) -> int:
        pol = self.policies[agent]
        token = pol.token(obs, self.prev[agent])
        a, _, _, self.hidden[agent] = pol.act(token, self.hidden[agent], rng)
        self.prev[agent] = a
        return a


def evaluate(policies, env, episodes: int, rng, aip_models: dict | None = None):
    """Mean episodic return and standard error per agent on the GS.

    Policies are frozen; actions are sampled stochastically.  When AIP
    models are given, the same episodes also score their mean CE.
    """
    n = env.n_agents
    returns = np.zeros((episodes, n))
    actor = PolicyActor(env, policies)
    ce_totals = {i: 0.0 for i in (aip_models or {})}
    ce_counts = {i: 0 for i in (aip_models or {})}
    ce_hidden: dict = {}
    ce_prev: dict = {}
    for e in range(episodes):
        s = env.reset(rng)
        actor.reset_episode()
        for i in ce_totals:
            ce_hidden[i] = aip_models[i].initial_state()
            ce_prev[i] = None
        for _ in range(env.horizon):
            actions = [actor.act(i, env.observe(s, i), rng) for i in range(n)]
            for i in ce_totals:
                token = aip_mod.make_token(env, i, env.extract_local(s, i), ce_prev[i])
                probs, ce_hidden[i] = aip_models[i].predict(token, ce_hidden[i])
                u = env.extract_influence_sources(s, i)
                for k, p in enumerate(probs):
                    ce_totals[i] -= math.log(max(float(p[u[k]]), 1e-300))
                ce_counts[i] += 1
                ce_prev[i] = actions[i]
            s, rewards = env.step_global(s, actions, rng)
            returns[e] += rewards
    means = returns.mean(axis=0)
    ses = returns.std(axis=0, ddof=1) / math.sqrt(episodes) if episodes > 1 \
        else np.zeros(n)
    ces = {i: ce_totals[i] / max(1, ce_counts[i]) for i in ce_totals}
    return means, ses, ces


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    return "unknown"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class _Recorder:
    def __init__(self, metrics: RunMetrics, t0: float):
        self.metrics = metrics
        self.t0 = t0

    def eval_rows(self, step: int, means, ses, ces):
        wall = time.perf_counter() - self.t0
        for i in range(len(means)):
            self.metrics.rows.append({
                "global_step": step,
                "agent_id": i,
                "eval_return": float(means[i]),
                "eval_se": float(ses[i]),
                "aip_ce": float(ces[i]) if i in ces else None,
                "phase": PHASE_EVAL,
                "wall_s": wall,
            })

    def phase_row(self, step: int, phase: str, seconds: float):
        self.metrics.rows.append({
            "global_step": step,
            "agent_id": -1,
            "eval_return": None,
            "eval_se": None,
            "aip_ce": None,
            "phase": phase,
            "wall_s": seconds,
        })


def run(cfg: RunConfig) -> RunMetrics:
    if cfg.mode == "gs":
        return run_gs(cfg)
    if cfg.mode == "untrained":
        return run_untrained_dials(cfg)
    return run_dials(cfg)


def _dials_like_run(cfg: RunConfig, trained: bool) -> RunMetrics:
    t_start = time.perf_counter()
    metrics = RunMetrics(config=asdict(cfg))
    rec = _Recorder(metrics, t_start)
    env = make_env(cfg.env, cfg.grid_side, horizon=cfg.horizon)
    sessions = [AgentSession(cfg, i) for i in range(env.n_agents)]
    workers = int(os.environ.get("DIALS_WORKERS", cfg.worker_count))
    pool = _Pool(max(1, workers))
    collect_s = 0.0
    aip_s = 0.0
    agents_s = 0.0
    eval_rng_idx = 0

    def do_eval(step: int):
        nonlocal eval_rng_idx
        rng = stream(cfg.seed, "eval", eval_rng_idx)
        eval_rng_idx += 1
        policies = [s.learner.policy for s in sessions]
        models = {i: sessions[i].aip for i in range(len(sessions))}
        means, ses, ces = evaluate(policies, env, cfg.eval_episodes, rng, models)
        rec.eval_rows(step, means, ses, ces)

    try:
        do_eval(0)
        global_step = 0
        for round_idx in range(cfg.rounds):
            round_steps = min(cfg.F, cfg.total_steps - global_step)
            if trained:
                t0 = time.perf_counter()
                actor = PolicyActor(env, [s.learner.policy for s in sessions])
                datasets = aip_mod.collect_datasets(
                    env, actor, cfg.aip_dataset_size,
                    stream(cfg.seed, "collect", round_idx))
                dt = time.perf_counter() - t0
                collect_s += dt
                rec.phase_row(global_step, PHASE_COLLECT, dt)

                t0 = time.perf_counter()
                results = pool.map(_work_train_aip, [
                    (sessions[i], datasets[i], cfg, cfg.seed, round_idx)
                    for i in range(len(sessions))
                ])
                sessions = [r[0] for r in results]
                dt = time.perf_counter() - t0
                aip_s += dt
                rec.phase_row(global_step, PHASE_AIP, dt)
            for i, s in enumerate(sessions):
                metrics.aip_hashes.setdefault(str(i), []).append(
                    {"round": round_idx, "chunk": -1, "hash": s.aip_hash()})
            done_in_round = 0
            chunk_idx = 0
            while done_in_round < round_steps:
                to_eval = cfg.eval_every - (global_step % cfg.eval_every)
                chunk = min(round_steps - done_in_round, to_eval)
                t0 = time.perf_counter()
                results = pool.map(_work_train_chunk,
                                   [(s, chunk) for s in sessions])
                sessions = [r[0] for r in results]
                dt = time.perf_counter() - t0
                agents_s += dt
                rec.phase_row(global_step + chunk, PHASE_AGENTS, dt)
                global_step += chunk
                done_in_round += chunk
                for i, s in enumerate(sessions):
                    metrics.aip_hashes[str(i)].append(
                        {"round": round_idx, "chunk": chunk_idx, "hash": s.aip_hash()})
                chunk_idx += 1
                if global_step % cfg.eval_every == 0 or global_step == cfg.total_steps:
                    do_eval(global_step)
            metrics.rounds_run += 1
    finally:
        pool.close()
    metrics.breakdown = {
        "agent_training_s": agents_s,
        "data_collection_s": collect_s,
        "aip_training_s": aip_s,
        "total_s": time.perf_counter() - t_start,
    }
    if cfg.out_dir:
        write_outputs(metrics, cfg.out_dir)
    return metrics


def run_dials(cfg: RunConfig) -> RunMetrics:
    if cfg.mode != "dials":
        raise ValueError("config mode must be 'dials'")
    return _dials_like_run(cfg, trained=True)


def run_untrained_dials(cfg: RunConfig) -> RunMetrics:
    if cfg.mode != "untrained":
        raise ValueError("config mode must be 'untrained'")
    return _dials_like_run(cfg, trained=False)


def run_gs(cfg: RunConfig) -> RunMetrics:
    """All agents act and learn simultaneously on one global simulator."""
    if cfg.mode != "gs":
        raise ValueError("config mode must be 'gs'")
    t_start = time.perf_counter()
    metrics = RunMetrics(config=asdict(cfg))
    rec = _Recorder(metrics, t_start)
    env = make_env(cfg.env, cfg.grid_side, horizon=cfg.horizon)
    n = env.n_agents
    policies = [ppo_mod.default_policy_model(
        cfg.env, env.obs_dim, env.n_actions(i),
        seed=_entropy32(cfg.seed, "policy-init", i), dtype=np.float32)
        for i in range(n)]
    learners = [ppo_mod.PpoLearner(p, ppo_mod.default_ppo_config(cfg.env))
                for p in policies]
    env_rng = stream(cfg.seed, "gs-env")
    act_rngs = [stream(cfg.seed, "gs-act", i) for i in range(n)]
    upd_rngs = [stream(cfg.seed, "gs-update", i) for i in range(n)]
    eval_rng_idx = 0

    def do_eval(step: int):
        nonlocal eval_rng_idx
        rng = stream(cfg.seed, "eval", eval_rng_idx)
        eval_rng_idx += 1
        means, ses, ces = evaluate(policies, env, cfg.eval_episodes, rng, None)
        rec.eval_rows(step, means, ses, ces)

    do_eval(0)
    train_s = 0.0
    global_step = 0
    t_phase = time.perf_counter()
    s = env.reset(env_rng)
    hidden = [p.initial_state() for p in policies]
    prev = [None] * n
    ep_step = 0
    while global_step < cfg.total_steps:
        start = ep_step == 0
        tokens = []
        actions = []
        for i in range(n):
            pre_hidden = hidden[i]
            token = policies[i].token(env.observe(s, i), prev[i])
            a, logp, value, hidden[i] = policies[i].act(token, hidden[i], act_rngs[i])
            tokens.append((token, a, logp, value, pre_hidden))
            actions.append(a)
        s2, rewards = env.step_global(s, actions, env_rng)
        ep_step += 1
        done = ep_step >= env.horizon
        for i in range(n):
            token, a, logp, value, pre_hidden = tokens[i]
            learners[i].buffer.add(token, a, logp, float(rewards[i]), value,
                                   done, start, pre_hidden)
        global_step += 1
        if learners[0].buffer.full:
            for i in range(n):
                if done:
                    bootstrap = 0.0
                else:
                    nxt = policies[i].token(env.observe(s2, i), actions[i])
                    bootstrap = policies[i].value(nxt, hidden[i])
                learners[i].update(bootstrap, upd_rngs[i])
        s = s2
        prev = actions
        if done:
            s = env.reset(env_rng)
            hidden = [p.initial_state() for p in policies]
            prev = [None] * n
            ep_step = 0
        if global_step % cfg.eval_every == 0 or global_step == cfg.total_steps:
            dt = time.perf_counter() - t_phase
            train_s += dt
            rec.phase_row(global_step, PHASE_AGENTS, dt)
            do_eval(global_step)
            t_phase = time.perf_counter()
    metrics.breakdown = {
        "agent_training_s": train_s,
        "data_collection_s": 0.0,
        "aip_training_s": 0.0,
        "total_s": time.perf_counter() - t_start,
    }
    if cfg.out_dir:
        write_outputs(metrics, cfg.out_dir)
    return metrics


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_outputs(metrics: RunMetrics, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in metrics.rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    manifest = {
        "config": metrics.config,
        "seed": metrics.config["seed"],
        "git_describe": _git_describe(),
        "rounds_run": metrics.rounds_run,
        "runtime_breakdown": {
            "agents_training_s": metrics.breakdown.get("agent_training_s", 0.0),
            "data_collection_plus_influence_training_s":
                metrics.breakdown.get("data_collection_s", 0.0)
                + metrics.breakdown.get("aip_training_s", 0.0),
            "total_s": metrics.breakdown.get("total_s", 0.0),
            "detail": metrics.breakdown,
        },
        "aip_snapshot_hashes": metrics.aip_hashes,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
