"""Clipped-surrogate PPO with generalized advantage estimation.

One update routine serves all three policies through a small adapter
protocol: the adapter owns the batch data and knows how to evaluate
log-probs/values for an index set and to push gradients back. The control
policy uses a fully vectorized adapter (one morphology per batch); the
morphology and environment policies use tiny per-sample adapters.
"""

from dataclasses import dataclass

import numpy as np

from . import nets


class PpoError(ValueError):
    """Bad batch shapes or empty updates."""


def compute_gae(rewards, values, bootstrap_value, dones, gamma, lam):
    """Generalized advantage estimation.

    advantage_t = sum_{l>=0} (gamma*lam)^l * delta_{t+l}, truncated at done
    flags, with delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t).
    Returns raw (advantages, returns); normalization is the caller's business.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise PpoError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    if not (0.0 < gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise PpoError(f"gamma/lambda out of range: {gamma}, {lam}")
    t_len = len(rewards)
    adv = np.zeros(t_len)
    last = 0.0
    next_value = float(bootstrap_value)
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


class Adam:
    """Plain Adam over a named-parameter list; state keyed by position."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for _, p in named_params]
        self.v = [np.zeros_like(p) for _, p in named_params]

    def step(self, named_params, named_grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, ((_, p), (_, g)) in enumerate(zip(named_params, named_grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    kl_estimate: float
    clip_fraction: float
    n_samples: int

    def to_dict(self):
        return {"policy_loss": self.policy_loss, "value_loss": self.value_loss,
                "kl_estimate": self.kl_estimate, "clip_fraction": self.clip_fraction,
                "n_samples": self.n_samples}


def ppo_update(adapter, cfg, rng):
    """Run clipped-surrogate epochs over the adapter's batch.

    The adapter provides: n, old_logp, advantages, returns,
    policy_forward(idx) -> logp, policy_backward(idx, dlp) (valid right after
    the matching forward), value_forward(idx) -> v, value_backward(idx, dv),
    zero_policy_grads(), zero_value_grads(), plus named params/grads and the
    two Adam optimizers. Returns aggregate UpdateStats.
    """
    n = adapter.n
    if n == 0:
        raise PpoError("empty batch")
    adv = adapter.advantages.copy()
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    pol_losses, val_losses, kls, clip_fracs = [], [], [], []
    for _ in range(cfg.iterations_per_batch):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            m = len(idx)

            logp = adapter.policy_forward(idx)
            if not np.all(np.isfinite(logp)):
                raise PpoError("non-finite log-probabilities during update")
            ratio = np.exp(logp - adapter.old_logp[idx])
            a = adv[idx]
            unclipped = ratio * a
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a
            pol_losses.append(float(-np.mean(np.minimum(unclipped, clipped))))
            kls.append(float(np.mean(adapter.old_logp[idx] - logp)))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))

            # d(-mean(min(u, c)))/dlogp: gradient flows through the ratio only
            # where the unclipped branch is active (or inside the clip window)
            use_unclipped = unclipped <= clipped
            inside = (ratio >= 1.0 - cfg.clip) & (ratio <= 1.0 + cfg.clip)
            active = use_unclipped | inside
            dlp = np.where(active, -ratio * a / m, 0.0)
            adapter.zero_policy_grads()
            adapter.policy_backward(idx, dlp)
            nets.clip_grads(adapter.policy_named_grads(), cfg.grad_clip)
            adapter.policy_adam.step(adapter.policy_named_params(),
                                     adapter.policy_named_grads())

            v = adapter.value_forward(idx)
            err = v - adapter.returns[idx]
            val_losses.append(float(np.mean(err ** 2)))
            adapter.zero_value_grads()
            adapter.value_backward(idx, 2.0 * err / m)
            nets.clip_grads(adapter.value_named_grads(), cfg.grad_clip)
            adapter.value_adam.step(adapter.value_named_params(),
                                    adapter.value_named_grads())

    return UpdateStats(float(np.mean(pol_losses)), float(np.mean(val_losses)),
                       float(np.mean(kls)), float(np.mean(clip_fracs)), n)


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------

class ControlAdapter:
    """Vectorized batch for the control policy: one morphology, many steps."""

    def __init__(self, policy, feats, adj, actions, old_logp, advantages, returns,
                 policy_adam, value_adam):
        self.policy = policy
        self.feats = feats                # [B, N, F]
        self.adj = adj
        self.actions = actions            # [B, N]
        self.old_logp = old_logp
        self.advantages = advantages
        self.returns = returns
        self.policy_adam = policy_adam
        self.value_adam = value_adam
        self.n = feats.shape[0]

    def policy_forward(self, idx):
        return self.policy.batch_logp(self.feats[idx], self.adj, self.actions[idx])

    def policy_backward(self, idx, dlp):
        self.policy.batch_logp_backward(dlp)

    def value_forward(self, idx):
        return self.policy.batch_value(self.feats[idx], self.adj)

    def value_backward(self, idx, dv):
        self.policy.batch_value_backward(dv)

    def zero_policy_grads(self):
        nets.zero_grads(self.policy.policy_named_grads())

    def zero_value_grads(self):
        nets.zero_grads(self.policy.value_named_grads())

    def policy_named_params(self):
        return self.policy.policy_named_params()

    def policy_named_grads(self):
        return self.policy.policy_named_grads()

    def value_named_params(self):
        return self.policy.value_named_params()

    def value_named_grads(self):
        return self.policy.value_named_grads()


class PerSampleAdapter:
    """Loop-based batch for the meta policies, whose graphs differ per sample.

    `samples` is a list of per-sample tuples understood by the callbacks:
    logp_fn(policy, sample) -> logp, logp_bwd_fn(policy, sample, w),
    value_fn(policy, sample) -> v, value_bwd_fn(policy, sample, w).
    The backward callbacks re-run their forward internally, so minibatch
    caches are not reused across samples.
    """

    def __init__(self, policy, samples, old_logp, advantages, returns,
                 policy_adam, value_adam, logp_fn, logp_bwd_fn, value_fn, value_bwd_fn):
        self.policy = policy
        self.samples = samples
        self.old_logp = old_logp
        self.advantages = advantages
        self.returns = returns
        self.policy_adam = policy_adam
        self.value_adam = value_adam
        self._logp = logp_fn
        self._logp_bwd = logp_bwd_fn
        self._value = value_fn
        self._value_bwd = value_bwd_fn
        self.n = len(samples)

    def policy_forward(self, idx):
        return np.array([self._logp(self.policy, self.samples[i]) for i in idx])

    def policy_backward(self, idx, dlp):
        for i, w in zip(idx, dlp):
            if w != 0.0:
                self._logp(self.policy, self.samples[i])
                self._logp_bwd(self.policy, self.samples[i], w)

    def value_forward(self, idx):
        return np.array([self._value(self.policy, self.samples[i]) for i in idx])

    def value_backward(self, idx, dv):
        for i, w in zip(idx, dv):
            self._value(self.policy, self.samples[i])
            self._value_bwd(self.policy, self.samples[i], w)

    def zero_policy_grads(self):
        nets.zero_grads(self.policy.policy_named_grads())

    def zero_value_grads(self):
        nets.zero_grads(self.policy.value_named_grads())

    def policy_named_params(self):
        return self.policy.policy_named_params()

    def policy_named_grads(self):
        return self.policy.policy_named_grads()

    def value_named_params(self):
        return self.policy.value_named_params()

    def value_named_grads(self):
        return self.policy.value_named_grads()
