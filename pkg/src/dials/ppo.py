"""Independent PPO with decentralized critics.

Each agent owns a policy/value network (feedforward or gated-recurrent)
over the shared flat-parameter machinery, a fixed-capacity rollout
buffer, and a clipped-surrogate update with generalized advantage
estimation.  The advantage recursion is cut every ``rollout_steps``
transitions (value bootstrap window); the buffer holds ``memory``
transitions and is consumed exactly once per update.

Recurrent policies snapshot their hidden state at window boundaries and
are backpropagated through time across one window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class PpoConfig:
    rollout_steps: int = 8        # T: bootstrap window and BPTT length
    learning_rate: float = 2.5e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    memory: int = 128             # buffer capacity between updates
    batch_size: int = 32          # transitions per minibatch
    epochs: int = 3
    entropy_beta: float = 1e-2
    clip_eps: float = 0.1
    value_coeff: float = 1.0


def default_ppo_config(env_name: str) -> PpoConfig:
    return PpoConfig(rollout_steps=16 if env_name == "traffic" else 8)


class PolicyModel:
    """Categorical policy with a scalar value head.

    The recurrent variant consumes (observation, previous-action one-hot)
    tokens; the feedforward variant uses the observation alone.
    """

    def __init__(self, arch: str, obs_dim: int, n_actions: int,
                 hidden_sizes=(256, 128), seed: int | None = 0,
                 dtype=np.float64):
        if arch not in ("ff", "gru"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_sizes = list(hidden_sizes)
        self.dtype = np.dtype(dtype)
        self.token_dim = obs_dim + (n_actions if arch == "gru" else 0)
        sizes = [self.token_dim] + self.hidden_sizes
        enc_cls = nn.MlpEncoder if arch == "ff" else nn.GruEncoder
        specs = list(enc_cls.specs("enc", sizes))
        # action logits and the value share one affine layer: out[..., :A]
        # are the logits, out[..., A] is the value
        specs += nn.LinearHead.specs("out", sizes[-1], n_actions + 1)
        self.pv = nn.ParameterVector(specs, seed=seed, dtype=self.dtype)
        self.encoder = enc_cls(self.pv, "enc", sizes)
        self.out_head = nn.LinearHead(self.pv, "out", sizes[-1], n_actions + 1)

    def token(self, obs: np.ndarray, prev_action: int | None) -> np.ndarray:
        if self.arch == "ff":
            return np.asarray(obs, dtype=self.dtype)
        out = np.zeros(self.token_dim, dtype=self.dtype)
        out[:self.obs_dim] = obs
        if prev_action is not None:
            out[self.obs_dim + prev_action] = 1.0
        return out

    def initial_state(self):
        return self.encoder.initial_state() if self.arch == "gru" else None

    def act(self, token: np.ndarray, hstate, rng):
        """Sample an action; returns (action, log_prob, value, hstate')."""
        token = np.asarray(token, dtype=self.dtype)
        if self.arch == "gru":
            feats, hstate = self.encoder.advance(token, hstate)
        else:
            feats, _ = self.encoder.forward(token)
        out = self.out_head.forward(feats)
        logits = out[:self.n_actions]
        if not np.all(np.isfinite(logits)):
            raise RuntimeError(f"non-finite policy logits {logits}")
        probs = nn.softmax(logits)
        a = min(int(np.searchsorted(np.cumsum(probs), rng.random())),
                self.n_actions - 1)
        return a, float(np.log(probs[a])), float(out[self.n_actions]), hstate

    def value(self, token: np.ndarray, hstate) -> float:
        token = np.asarray(token, dtype=self.dtype)
        if self.arch == "gru":
            feats, _ = self.encoder.advance(token, hstate)
        else:
            feats, _ = self.encoder.forward(token)
        return float(self.out_head.forward(feats)[self.n_actions])

    # -- persistence ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": "policy",
            "arch": self.arch,
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "hidden_sizes": self.hidden_sizes,
        }

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.header(), self.pv.data)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        header, params = nn.load_checkpoint(path)
        if header.get("kind") != "policy":
            raise ValueError("checkpoint is not a policy")
        model = cls(header["arch"], header["obs_dim"], header["n_actions"],
                    header["hidden_sizes"], seed=None)
        model.pv.load_data(params)
        return model


def default_policy_model(env_name: str, obs_dim: int, n_actions: int,
                         seed: int, dtype=np.float64) -> PolicyModel:
    arch = "ff" if env_name == "traffic" else "gru"
    return PolicyModel(arch, obs_dim, n_actions, hidden_sizes=[256, 128],
                       seed=seed, dtype=dtype)


class RolloutBuffer:
    """Fixed-capacity transition store consumed once per update."""

    def __init__(self, capacity: int, token_dim: int, segment_len: int,
                 hidden_sizes=None, dtype=np.float64):
        if capacity % segment_len != 0:
            raise ValueError("memory must be a multiple of rollout_steps")
        self.capacity = capacity
        self.segment_len = segment_len
        self.tokens = np.zeros((capacity, token_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=int)
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.starts = np.zeros(capacity, dtype=bool)
        n_segments = capacity // segment_len
        self.hidden0 = None
        if hidden_sizes:
            self.hidden0 = [np.zeros((n_segments, h), dtype=dtype)
                            for h in hidden_sizes]
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos == self.capacity

    def add(self, token, action, log_prob, reward, value, done, start, hstate):
        p = self.pos
        if p >= self.capacity:
            raise RuntimeError("rollout buffer overflow")
        if p % self.segment_len == 0 and self.hidden0 is not None:
            seg = p // self.segment_len
            for k, h in enumerate(hstate):
                self.hidden0[k][seg] = h
        self.tokens[p] = token
        self.actions[p] = action
        self.log_probs[p] = log_prob
        self.rewards[p] = reward
        self.values[p] = value
        self.dones[p] = done
        self.starts[p] = start
        self.pos += 1

    def reset(self) -> None:
        self.pos = 0


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam,
                segment_len=None):
    """Recursive GAE; the lambda-chain is cut at episode ends and at
    segment boundaries (value bootstrap window), advantages are not yet
    normalized.  Returns (advantages, returns)."""
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < n else bootstrap_value
        delta = rewards[t] + gamma * next_value * (1.0 - dones[t]) - values[t]
        boundary = segment_len is not None and (t + 1) % segment_len == 0
        carry = 0.0 if (dones[t] or boundary) else last
        last = delta + gamma * lam * carry
        adv[t] = last
    return adv, adv + values


def _policy_loss_pieces(probs, values, actions, old_log_probs, advantages,
                        returns, cfg):
    """Loss value plus gradients wrt logits and value outputs."""
    count = len(actions)
    idx = np.arange(count)
    logp = np.log(np.maximum(probs[idx, actions], 1e-300))
    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    logs = np.log(np.maximum(probs, 1e-300))
    entropy = -(probs * logs).sum(axis=1)
    v_err = values - returns
    loss = (-surrogate.mean() - cfg.entropy_beta * entropy.mean()
            + cfg.value_coeff * (v_err ** 2).mean())
    # d(-surrogate)/dlogp flows only where the unclipped branch is active
    active = (unclipped <= clipped).astype(np.float64)
    dlogp = -(ratio * advantages * active) / count
    dlogits = probs * (-dlogp)[:, None]
    dlogits[idx, actions] += dlogp
    # entropy bonus: dH/dz_k = -p_k (log p_k + H)
    dlogits += cfg.entropy_beta * probs * (logs + entropy[:, None]) / count
    dvalues = 2.0 * cfg.value_coeff * v_err / count
    stats = {
        "clip_fraction": float((active == 0.0).mean()),
        "entropy": float(entropy.mean()),
        "ratio_mean": float(ratio.mean()),
    }
    return float(loss), dlogits, dvalues, stats


class PpoLearner:
    """Owns one policy, its optimizer state and one rollout buffer."""

    def __init__(self, policy: PolicyModel, cfg: PpoConfig):
        self.policy = policy
        self.cfg = cfg
        hidden = policy.hidden_sizes if policy.arch == "gru" else None
        self.buffer = RolloutBuffer(cfg.memory, policy.token_dim,
                                    cfg.rollout_steps, hidden,
                                    dtype=policy.dtype)
        self.opt = nn.Adam(policy.pv, cfg.learning_rate)

    # -- loss on a minibatch --------------------------------------------------

    def _forward_flat(self, tokens):
        feats, cache = self.policy.encoder.forward(tokens)
        out = self.policy.out_head.forward(feats)
        probs = nn.softmax(out[:, :self.policy.n_actions])
        values = out[:, self.policy.n_actions]
        return feats, probs, values, cache

    def _minibatch_loss_and_grad(self, idx, advantages, returns) -> tuple:
        cfg = self.cfg
        buf = self.buffer
        pol = self.policy
        pol.pv.zero_grad()
        if pol.arch == "ff":
            tokens = buf.tokens[idx]
            feats, probs, values, cache = self._forward_flat(tokens)
            loss, dlogits, dvalues, stats = _policy_loss_pieces(
                probs, values, buf.actions[idx], buf.log_probs[idx],
                advantages[idx], returns[idx], cfg)
            dout = np.concatenate([dlogits, dvalues[:, None]],
                                  axis=1).astype(pol.dtype)
            dfeats = pol.out_head.backward(dout, feats)
            pol.encoder.backward(dfeats, cache)
            return loss, stats
        # recurrent: idx are segment indices
        T = cfg.rollout_steps
        flat = (idx[:, None] * T + np.arange(T)[None, :]).reshape(-1)
        tokens = buf.tokens[flat].reshape(len(idx), T, -1)
        starts = buf.starts[flat].reshape(len(idx), T)
        h0 = [h[idx] for h in buf.hidden0]
        feats, _, cache = pol.encoder.forward_sequence(tokens, h0=h0, starts=starts)
        flat_feats = feats.reshape(len(idx) * T, -1)
        out = pol.out_head.forward(flat_feats)
        probs = nn.softmax(out[:, :pol.n_actions])
        values = out[:, pol.n_actions]
        loss, dlogits, dvalues, stats = _policy_loss_pieces(
            probs, values, buf.actions[flat], buf.log_probs[flat],
            advantages[flat], returns[flat], cfg)
        dout = np.concatenate([dlogits, dvalues[:, None]],
                              axis=1).astype(pol.dtype)
        dfeats = pol.out_head.backward(dout, flat_feats)
        pol.encoder.backward_sequence(dfeats.reshape(len(idx), T, -1), cache,
                                      starts=starts)
        return loss, stats

    def loss_on_indices(self, idx, advantages, returns) -> float:
        """Recompute the minibatch loss from current parameters (no grads)."""
        cfg = self.cfg
        buf = self.buffer
        pol = self.policy
        if pol.arch == "ff":
            _, probs, values, _ = self._forward_flat(buf.tokens[idx])
            loss, _, _, _ = _policy_loss_pieces(
                probs, values, buf.actions[idx], buf.log_probs[idx],
                advantages[idx], returns[idx], cfg)
            return loss
        T = cfg.rollout_steps
        flat = (idx[:, None] * T + np.arange(T)[None, :]).reshape(-1)
        tokens = buf.tokens[flat].reshape(len(idx), T, -1)
        starts = buf.starts[flat].reshape(len(idx), T)
        h0 = [h[idx] for h in buf.hidden0]
        feats, _, _ = pol.encoder.forward_sequence(tokens, h0=h0, starts=starts)
        flat_feats = feats.reshape(len(idx) * T, -1)
        out = pol.out_head.forward(flat_feats)
        probs = nn.softmax(out[:, :pol.n_actions])
        values = out[:, pol.n_actions]
        loss, _, _, _ = _policy_loss_pieces(
            probs, values, buf.actions[flat], buf.log_probs[flat],
            advantages[flat], returns[flat], cfg)
        return loss

    # -- update -----------------------------------------------------------------

    def advantages_and_returns(self, bootstrap_value: float):
        buf = self.buffer
        adv, ret = compute_gae(buf.rewards[:buf.pos], buf.values[:buf.pos],
                               buf.dones[:buf.pos], bootstrap_value,
                               self.cfg.gamma, self.cfg.gae_lambda,
                               segment_len=self.cfg.rollout_steps)
        std = adv.std()
        norm = (adv - adv.mean()) / (std + 1e-8)
        return norm, ret

    def update(self, bootstrap_value: float, rng) -> dict:
        """Consume the buffer: epochs x minibatches of clipped-PPO steps."""
        cfg = self.cfg
        buf = self.buffer
        if not buf.full:
            raise RuntimeError("rollout buffer not full")
        advantages, returns = self.advantages_and_returns(bootstrap_value)
        losses = []
        stats_acc: dict = {}
        n = buf.pos
        for _ in range(cfg.epochs):
            if self.policy.arch == "ff":
                order = rng.permutation(n)
                batches = [order[lo:lo + cfg.batch_size]
                           for lo in range(0, n, cfg.batch_size)]
            else:
                n_seg = n // cfg.rollout_steps
                seg_per_batch = max(1, cfg.batch_size // cfg.rollout_steps)
                order = rng.permutation(n_seg)
                batches = [order[lo:lo + seg_per_batch]
                           for lo in range(0, n_seg, seg_per_batch)]
            for idx in batches:
                loss, stats = self._minibatch_loss_and_grad(idx, advantages, returns)
                if not np.isfinite(loss):
                    raise RuntimeError(f"non-finite PPO loss {loss}")
                self.opt.step()
                losses.append(loss)
                for k, v in stats.items():
                    stats_acc.setdefault(k, []).append(v)
        buf.reset()
        out = {k: float(np.mean(v)) for k, v in stats_acc.items()}
        out["loss"] = float(np.mean(losses))
        return out
