"""Scaling benchmark: per-step wall time of one local simulator versus
the global simulator at different grid sizes.

The local-simulator figure times one agent's full loop (policy forward,
influence-predictor sampling, local step) and is expected to be flat in
the grid size; the global-simulator figure times one joint step (every
agent acting plus the global transition) and grows with the number of
agents.  Medians over repeated blocks absorb scheduler noise.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import aip as aip_mod
from . import ppo as ppo_mod
from .envs import make_env
from .rng import stream


@dataclass
class ScalingResult:
    env: str
    grid_side: int
    ials_step_s: float
    gs_step_s: float


def _median(xs):
    xs = sorted(xs)
    n = len(xs)
    return xs[n // 2] if n % 2 else 0.5 * (xs[n // 2 - 1] + xs[n // 2])


def time_ials_per_step(env_name: str, grid_side: int, seed: int = 0,
                       steps: int = 2000, repeats: int = 5,
                       horizon: int = 100) -> float:
    """Median per-step seconds of one influence-augmented local simulator."""
    env = make_env(env_name, grid_side, horizon=horizon)
    agent = 0
    policy = ppo_mod.default_policy_model(env_name, env.obs_dim,
                                          env.n_actions(agent), seed=seed,
                                          dtype=np.float32)
    model = aip_mod.default_aip_model(env, agent, seed=seed, dtype=np.float32)
    rng = stream(seed, "bench-ials", grid_side)
    times = []
    for rep in range(repeats + 1):
        x = env.local_reset(agent)
        hidden = policy.initial_state()
        ahidden = model.initial_state()
        prev = None
        ep = 0
        t0 = time.perf_counter()
        for _ in range(steps):
            token = policy.token(env.encode_local(x, agent), prev)
            a, _, _, hidden = policy.act(token, hidden, rng)
            atoken = aip_mod.make_token(env, agent, x, prev)
            u, ahidden = model.sample_sources(atoken, ahidden, rng)
            x, _ = env.local_step(x, a, u, rng, agent)
            prev = a
            ep += 1
            if ep >= horizon:
                x = env.local_reset(agent)
                hidden = policy.initial_state()
                ahidden = model.initial_state()
                prev = None
                ep = 0
        if rep > 0:  # first block is warmup
            times.append((time.perf_counter() - t0) / steps)
    return _median(times)


def time_gs_per_step(env_name: str, grid_side: int, seed: int = 0,
                     steps: int = 400, repeats: int = 5,
                     horizon: int = 100) -> float:
    """Median per-step seconds of one joint global-simulator step
    (all agents acting with their policies plus the global transition)."""
    env = make_env(env_name, grid_side, horizon=horizon)
    n = env.n_agents
    policies = [ppo_mod.default_policy_model(env_name, env.obs_dim,
                                             env.n_actions(i), seed=seed + i,
                                             dtype=np.float32)
                for i in range(n)]
    rng = stream(seed, "bench-gs", grid_side)
    times = []
    for rep in range(repeats + 1):
        s = env.reset(rng)
        hidden = [p.initial_state() for p in policies]
        prev = [None] * n
        ep = 0
        t0 = time.perf_counter()
        for _ in range(steps):
            actions = []
            for i in range(n):
                token = policies[i].token(env.observe(s, i), prev[i])
                a, _, _, hidden[i] = policies[i].act(token, hidden[i], rng)
                actions.append(a)
            s, _ = env.step_global(s, actions, rng)
            prev = actions
            ep += 1
            if ep >= horizon:
                s = env.reset(rng)
                hidden = [p.initial_state() for p in policies]
                prev = [None] * n
                ep = 0
        if rep > 0:
            times.append((time.perf_counter() - t0) / steps)
    return _median(times)


def scaling_benchmark(env_name: str, grids, seed: int = 0, out_dir=None,
                      ials_steps: int = 2000, gs_steps: int = 400,
                      repeats: int = 5) -> list[ScalingResult]:
    results = []
    for g in grids:
        results.append(ScalingResult(
            env=env_name,
            grid_side=g,
            ials_step_s=time_ials_per_step(env_name, g, seed, steps=ials_steps,
                                           repeats=repeats),
            gs_step_s=time_gs_per_step(env_name, g, seed, steps=gs_steps,
                                       repeats=repeats),
        ))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "scaling.json"), "w") as fh:
            json.dump([r.__dict__ for r in results], fh, indent=2)
    return results
