"""Approximate influence predictors.

Classifiers that estimate the distribution of an agent's influence
sources given its action-local-state history: a feedforward variant
conditioned on the latest (local state, previous action) token and a
gated-recurrent variant that embeds the whole history.  One softmax head
per influence-source component; training minimizes the summed
cross-entropy on datasets sampled from the global simulator.

Trained with plain minibatch gradient descent (gradient-norm clip for
the recurrent variant); an untrained model with all-zero parameters
predicts exactly uniform heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs.trace import make_record

GRAD_CLIP = 5.0


@dataclass
class AipTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128      # tokens (feedforward) or episodes (recurrent)
    epochs: int = 100
    truncation: int = 100      # BPTT length for the recurrent variant
    dataset_size: int = 10_000


def default_train_config(arch: str) -> AipTrainConfig:
    if arch == "ff":
        return AipTrainConfig(batch_size=128, epochs=100)
    return AipTrainConfig(batch_size=32, epochs=300)


class AipModel:
    """Influence classifier over (local state, previous action) tokens."""

    def __init__(self, arch: str, token_dim: int, hidden_sizes, head_domains,
                 seed: int | None = 0, dtype=np.float64):
        if arch not in ("ff", "gru"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.token_dim = token_dim
        self.hidden_sizes = list(hidden_sizes)
        self.head_domains = list(head_domains)
        self.dtype = np.dtype(dtype)
        sizes = [token_dim] + self.hidden_sizes
        enc_cls = nn.MlpEncoder if arch == "ff" else nn.GruEncoder
        specs = list(enc_cls.specs("enc", sizes))
        total = sum(self.head_domains)
        specs += nn.LinearHead.specs("heads", sizes[-1], total)
        self.pv = nn.ParameterVector(specs, seed=seed, dtype=self.dtype)
        self.encoder = enc_cls(self.pv, "enc", sizes)
        # one fused affine layer; per-component softmax over logit slices
        self.heads = nn.LinearHead(self.pv, "heads", sizes[-1], total)
        self.head_slices = []
        ofs = 0
        for dom in self.head_domains:
            self.head_slices.append((ofs, ofs + dom))
            ofs += dom
        doms = set(self.head_domains)
        self._uniform_dom = self.head_domains[0] if len(doms) == 1 else None

    # -- stepwise prediction (simulation path) --------------------------------

    def initial_state(self):
        return self.encoder.initial_state() if self.arch == "gru" else None

    def predict(self, token: np.ndarray, hstate):
        token = np.asarray(token, dtype=self.dtype)
        if self.arch == "gru":
            feats, hstate = self.encoder.advance(token, hstate)
        else:
            feats, _ = self.encoder.forward(token)
        logits = self.heads.forward(feats)
        probs = [nn.softmax(logits[..., a:b]) for a, b in self.head_slices]
        return probs, hstate

    def sample_sources(self, token: np.ndarray, hstate, rng):
        if self._uniform_dom is not None:
            token = np.asarray(token, dtype=self.dtype)
            if self.arch == "gru":
                feats, hstate = self.encoder.advance(token, hstate)
            else:
                feats, _ = self.encoder.forward(token)
            logits = self.heads.forward(feats).reshape(-1, self._uniform_dom)
            probs = nn.softmax(logits)
            cum = np.cumsum(probs, axis=1)
            draws = rng.random(len(self.head_domains))
            idx = (cum < draws[:, None]).sum(axis=1)
            np.minimum(idx, self._uniform_dom - 1, out=idx)
            return tuple(int(i) for i in idx), hstate
        probs, hstate = self.predict(token, hstate)
        u = tuple(
            min(int(np.searchsorted(np.cumsum(p), rng.random())), len(p) - 1)
            for p in probs
        )
        return u, hstate

    # -- batched training ------------------------------------------------------

    def _forward_batch(self, tokens: np.ndarray, starts=None):
        tokens = np.asarray(tokens, dtype=self.dtype)
        if self.arch == "gru":
            feats, _, cache = self.encoder.forward_sequence(tokens, starts=starts)
        else:
            feats, cache = self.encoder.forward(tokens)
        logits = self.heads.forward(feats)
        probs = [nn.softmax(logits[..., a:b]) for a, b in self.head_slices]
        return feats, probs, cache

    def ce_loss(self, tokens: np.ndarray, targets: np.ndarray, starts=None) -> float:
        _, probs, _ = self._forward_batch(tokens, starts)
        count = targets.shape[0] if targets.ndim == 2 else targets.shape[0] * targets.shape[1]
        total = 0.0
        for k, p in enumerate(probs):
            tk = targets[..., k]
            picked = np.take_along_axis(p, tk[..., None], axis=-1)[..., 0]
            total -= np.log(np.maximum(picked, 1e-300)).sum()
        return float(total / count)

    def _heads_loss_and_backward(self, feats, targets, cache, starts=None) -> float:
        count = targets.shape[0] if targets.ndim == 2 else targets.shape[0] * targets.shape[1]
        self.pv.zero_grad()
        logits = self.heads.forward(feats)
        if self._uniform_dom is not None:
            dom = self._uniform_dom
            n_heads = len(self.head_domains)
            flat = logits.reshape(-1, n_heads, dom)
            p = nn.softmax(flat)
            tk = targets.reshape(-1, n_heads)
            rows = np.arange(flat.shape[0])[:, None]
            cols = np.arange(n_heads)[None, :]
            picked = p[rows, cols, tk]
            total = -float(np.log(np.maximum(picked, 1e-300)).sum())
            p[rows, cols, tk] -= 1.0
            dlogits = p.reshape(logits.shape)
        else:
            dlogits = np.empty_like(logits)
            total = 0.0
            for k, (a, b) in enumerate(self.head_slices):
                p = nn.softmax(logits[..., a:b])
                tk = targets[..., k]
                picked = np.take_along_axis(p, tk[..., None], axis=-1)[..., 0]
                total -= np.log(np.maximum(picked, 1e-300)).sum()
                np.put_along_axis(p, tk[..., None],
                                  np.take_along_axis(p, tk[..., None], axis=-1) - 1.0,
                                  axis=-1)
                dlogits[..., a:b] = p
        dfeats = self.heads.backward(dlogits / count, feats)
        if self.arch == "gru":
            self.encoder.backward_sequence(dfeats, cache, starts=starts)
        else:
            self.encoder.backward(dfeats, cache)
        return float(total / count)

    def ce_loss_and_grad(self, tokens: np.ndarray, targets: np.ndarray,
                         starts=None) -> float:
        tokens = np.asarray(tokens, dtype=self.dtype)
        if self.arch == "gru":
            feats, _, cache = self.encoder.forward_sequence(tokens, starts=starts)
        else:
            feats, cache = self.encoder.forward(tokens)
        return self._heads_loss_and_backward(feats, targets, cache, starts=starts)

    # -- persistence -----------------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": "aip",
            "arch": self.arch,
            "token_dim": self.token_dim,
            "hidden_sizes": self.hidden_sizes,
            "head_domains": self.head_domains,
        }

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.header(), self.pv.data)

    @classmethod
    def load(cls, path) -> "AipModel":
        header, params = nn.load_checkpoint(path)
        if header.get("kind") != "aip":
            raise ValueError("checkpoint is not an influence predictor")
        model = cls(header["arch"], header["token_dim"], header["hidden_sizes"],
                    header["head_domains"], seed=None)
        model.pv.load_data(params)
        return model

    def param_hash(self) -> str:
        import hashlib
        return hashlib.sha256(self.pv.data.tobytes()).hexdigest()[:16]


def uniform_ce(head_domains) -> float:
    """Evaluation CE of an exactly-uniform predictor."""
    return float(sum(math.log(d) for d in head_domains))


# ---------------------------------------------------------------------------
# datasets (Algorithm: collect (ALSH, influence-source) pairs from the GS)
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    xs: list       # local states, length T
    actions: list  # length T
    us: list       # influence-source values, length T
    rewards: list  # length T


@dataclass
class InfluenceDataset:
    agent: int
    episodes: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return sum(len(e.xs) for e in self.episodes)


class UniformActor:
    """Joint policy stub: uniform random actions."""

    def __init__(self, env):
        self.env = env

    def reset_episode(self) -> None:
        pass

    def act(self, agent: int, obs: np.ndarray, rng) -> int:
        return int(rng.integers(0, self.env.n_actions(agent)))


def collect_datasets(env, actor, n_samples: int, rng) -> list[InfluenceDataset]:
    """Run global-simulator episodes under the current joint policy and
    record time-aligned (local state, action, influence source) triples
    for every agent; u_t is extracted before a_t is applied."""
    if n_samples < env.horizon:
        raise ValueError("n_samples must cover at least one episode")
    n_episodes = math.ceil(n_samples / env.horizon)
    datasets = [InfluenceDataset(agent=i) for i in range(env.n_agents)]
    for _ in range(n_episodes):
        s = env.reset(rng)
        actor.reset_episode()
        eps = [Episode([], [], [], []) for _ in range(env.n_agents)]
        for t in range(env.horizon):
            us = [env.extract_influence_sources(s, i) for i in range(env.n_agents)]
            xs = [env.extract_local(s, i) for i in range(env.n_agents)]
            actions = [actor.act(i, env.observe(s, i), rng)
                       for i in range(env.n_agents)]
            s, rewards = env.step_global(s, actions, rng)
            for i in range(env.n_agents):
                eps[i].xs.append(xs[i])
                eps[i].actions.append(actions[i])
                eps[i].us.append(us[i])
                eps[i].rewards.append(float(rewards[i]))
        for i in range(env.n_agents):
            datasets[i].episodes.append(eps[i])
    return datasets


def datasets_to_records(datasets: list[InfluenceDataset]):
    """Shared trace records (one line per step, all agents)."""
    records = []
    n_agents = len(datasets)
    for e_idx in range(len(datasets[0].episodes)):
        eps = [d.episodes[e_idx] for d in datasets]
        for t in range(len(eps[0].xs)):
            records.append(make_record(
                e_idx, t,
                [eps[i].xs[t] for i in range(n_agents)],
                [eps[i].actions[t] for i in range(n_agents)],
                [eps[i].rewards[t] for i in range(n_agents)],
                [eps[i].us[t] for i in range(n_agents)],
            ))
    return records


def datasets_from_records(records, n_agents: int) -> list[InfluenceDataset]:
    datasets = [InfluenceDataset(agent=i) for i in range(n_agents)]
    by_episode: dict = {}
    for rec in records:
        by_episode.setdefault(rec["episode"], []).append(rec)
    for e_idx in sorted(by_episode):
        recs = sorted(by_episode[e_idx], key=lambda r: r["t"])
        for i in range(n_agents):
            datasets[i].episodes.append(Episode(
                xs=[tuple(r["x"][i]) for r in recs],
                actions=[r["a"][i] for r in recs],
                us=[tuple(r["u"][i]) for r in recs],
                rewards=[r["r"][i] for r in recs],
            ))
    return datasets


# ---------------------------------------------------------------------------
# token building
# ---------------------------------------------------------------------------


def token_dim(env, agent: int) -> int:
    return env.obs_dim + env.n_actions(agent)


def make_token(env, agent: int, x, prev_action: int | None) -> np.ndarray:
    obs = env.encode_local(x, agent)
    act = np.zeros(env.n_actions(agent))
    if prev_action is not None:
        act[prev_action] = 1.0
    return np.concatenate([obs, act])


def episode_arrays(env, agent: int, episode: Episode):
    T = len(episode.xs)
    tokens = np.zeros((T, token_dim(env, agent)))
    targets = np.zeros((T, len(env.influence_domains(agent))), dtype=int)
    for t in range(T):
        prev = episode.actions[t - 1] if t > 0 else None
        tokens[t] = make_token(env, agent, episode.xs[t], prev)
        targets[t] = episode.us[t]
    return tokens, targets


def dataset_arrays(env, agent: int, dataset: InfluenceDataset):
    """Stacked (episodes, T, token) / (episodes, T, heads) arrays."""
    pairs = [episode_arrays(env, agent, e) for e in dataset.episodes]
    lengths = {p[0].shape[0] for p in pairs}
    if len(lengths) != 1:
        raise ValueError("episodes must have equal length for batching")
    tokens = np.stack([p[0] for p in pairs])
    targets = np.stack([p[1] for p in pairs])
    return tokens, targets


def default_aip_model(env, agent: int, seed: int, dtype=np.float64) -> AipModel:
    """Per-environment defaults: feedforward 128/128 for the traffic grid,
    gated-recurrent 64/64 for the warehouse."""
    domains = env.influence_domains(agent)
    dim = token_dim(env, agent)
    from .envs.traffic import TrafficEnv
    if isinstance(env, TrafficEnv):
        return AipModel("ff", dim, [128, 128], domains, seed=seed, dtype=dtype)
    return AipModel("gru", dim, [64, 64], domains, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


def aip_train(model: AipModel, env, dataset: InfluenceDataset,
              cfg: AipTrainConfig, rng) -> tuple[AipModel, list[float]]:
    """Minibatch gradient descent on the summed-head cross-entropy.

    Recurrent minibatches are whole episodes, backpropagated through time
    in chunks of cfg.truncation steps.  Returns per-epoch mean training CE.
    """
    if not dataset.episodes:
        raise ValueError("empty dataset")
    opt = nn.Sgd(model.pv, cfg.learning_rate)
    curve = []
    if model.arch == "ff":
        tokens, targets = dataset_arrays(env, dataset.agent, dataset)
        tokens = tokens.reshape(-1, tokens.shape[-1]).astype(model.dtype)
        targets = targets.reshape(-1, targets.shape[-1])
        n = tokens.shape[0]
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            losses = []
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                loss = model.ce_loss_and_grad(tokens[idx], targets[idx])
                if not np.isfinite(loss):
                    raise RuntimeError(f"non-finite training loss {loss}")
                opt.step()
                losses.append(loss)
            curve.append(float(np.mean(losses)))
    else:
        tokens, targets = dataset_arrays(env, dataset.agent, dataset)
        tokens = tokens.astype(model.dtype)
        B, T, _ = tokens.shape
        for _ in range(cfg.epochs):
            order = rng.permutation(B)
            losses = []
            for lo in range(0, B, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                batch_tok = tokens[idx]
                batch_tgt = targets[idx]
                # hidden values carry across truncation chunks, gradients do not
                h0 = model.encoder.initial_state(len(idx))
                for c0 in range(0, T, cfg.truncation):
                    c1 = min(T, c0 + cfg.truncation)
                    chunk = batch_tok[:, c0:c1]
                    feats, h0, cache = model.encoder.forward_sequence(chunk, h0=h0)
                    loss = model._heads_loss_and_backward(
                        feats, batch_tgt[:, c0:c1], cache)
                    if not np.isfinite(loss):
                        raise RuntimeError(f"non-finite training loss {loss}")
                    model.pv.clip_grad_norm(GRAD_CLIP)
                    opt.step()
                    losses.append(loss)
            curve.append(float(np.mean(losses)))
    return model, curve


def aip_evaluate_ce(model: AipModel, env, actor, n_episodes: int, rng,
                    agent: int) -> float:
    """Mean per-step summed-head CE on fresh global-simulator episodes."""
    return float(evaluate_ce_all({agent: model}, env, actor, n_episodes, rng)[agent])


def evaluate_ce_all(models: dict, env, actor, n_episodes: int, rng) -> dict:
    """CE for several agents' models from one shared set of GS episodes."""
    totals = {i: 0.0 for i in models}
    counts = {i: 0 for i in models}
    hstates = {}
    prev_actions = {}
    for _ in range(n_episodes):
        s = env.reset(rng)
        actor.reset_episode()
        for i in models:
            hstates[i] = models[i].initial_state()
            prev_actions[i] = None
        for t in range(env.horizon):
            actions = [actor.act(i, env.observe(s, i), rng)
                       for i in range(env.n_agents)]
            for i, model in models.items():
                token = make_token(env, i, env.extract_local(s, i), prev_actions[i])
                probs, hstates[i] = model.predict(token, hstates[i])
                u = env.extract_influence_sources(s, i)
                for k, p in enumerate(probs):
                    totals[i] -= math.log(max(float(p[u[k]]), 1e-300))
                counts[i] += 1
                prev_actions[i] = actions[i]
            s, _ = env.step_global(s, actions, rng)
    return {i: totals[i] / max(1, counts[i]) for i in totals}


def gradient_check(model: AipModel, tokens, targets, rng, starts=None,
                   n_coords: int = 200) -> float:
    """Analytic vs central-difference gradients on a batch; max rel. error."""
    loss = model.ce_loss_and_grad(tokens, targets, starts=starts)
    if not np.isfinite(loss):
        raise RuntimeError("non-finite loss in gradient check")
    return nn.gradient_check(
        lambda: model.ce_loss(tokens, targets, starts=starts),
        model.pv, rng, n_coords=n_coords)
