"""The three actors of the co-evolution loop.

* ControlPolicy: graph net over per-joint observations + attributes, one
  Gaussian torque per joint (shared state-independent log-std).
* MorphologyPolicy: graph net over joint attributes, per-joint categorical
  topology choice (add / delete / keep) plus Gaussian attribute deltas.
* EnvironmentPolicy: pooled graph embedding of the design concatenated with
  the normalized terrain parameters, MLP trunk, Gaussian parameter deltas.

Each policy bundles its own value network. Actions are sampled raw; clipping
happens at the consumer boundary (simulator, morphology editor, parameter
bounds), and log-probabilities always describe the unclipped sample.
"""

import numpy as np

from . import nets
from .morphology import MorphAction, N_ATTRS, TOPOLOGY_CHOICES, NO_CHANGE
from .config import NetConfig


def graph_features(obs, attrs):
    """Per-node control features: observation next to normalized attributes."""
    return np.concatenate([obs, attrs], axis=-1)


def normalize_theta(vec, lo, hi):
    return 2.0 * (vec - lo) / (hi - lo) - 1.0


def denormalize_theta(norm, lo, hi):
    return lo + 0.5 * (norm + 1.0) * (hi - lo)


class ControlPolicy:
    """Per-joint torques for an arbitrary joint tree."""

    def __init__(self, obs_width, ncfg: NetConfig, rng):
        in_dim = obs_width + N_ATTRS
        self.trunk = nets.GraphNet(in_dim, ncfg.control_gnn, rng)
        self.mean_head = nets.Linear(self.trunk.out_dim, 1, rng, gain=0.01)
        self.log_std = np.zeros(1)
        self.g_log_std = np.zeros(1)
        self.vtrunk = nets.GraphNet(in_dim, ncfg.value_gnn, rng)
        self.vhead = nets.Linear(self.vtrunk.out_dim, 1, rng)

    # -- acting ---------------------------------------------------------------

    def act(self, obs, attrs, adj, rng, deterministic=False):
        """Sample torques; returns (action, log_prob, value)."""
        feats = graph_features(obs, attrs)
        mean = self.forward_mean(feats, adj)
        if deterministic:
            action = mean.copy()
        else:
            action = nets.gaussian_sample(mean, self.log_std, rng)
        logp = float(nets.gaussian_logprob(mean, self.log_std, action))
        return action, logp, self.value(feats, adj)

    def forward_mean(self, feats, adj):
        h = self.trunk.forward(feats, adj)
        return self.mean_head.forward(h)[..., 0]

    def value(self, feats, adj):
        h = self.vtrunk.forward(feats, adj)
        v = self.vhead.forward(h)[..., 0]
        return float(np.mean(v)) if v.ndim == 1 else np.mean(v, axis=-1)

    # -- batched update paths ---------------------------------------------------

    def batch_logp(self, feats, adj, actions):
        """Log-probs for stored actions, shape [B]; caches for backward."""
        mean = self.forward_mean(feats, adj)
        self._mean = mean
        self._actions = actions
        return nets.gaussian_logprob(mean, self.log_std, actions)

    def batch_logp_backward(self, dlp):
        dmean, dls = nets.gaussian_logprob_backward(
            self._mean, self.log_std, self._actions, dlp)
        self.g_log_std += np.array([dls.sum()])
        self.trunk.backward(self.mean_head.backward(dmean[..., None]))

    def batch_value(self, feats, adj):
        h = self.vtrunk.forward(feats, adj)
        self._n_nodes = h.shape[-2]
        return np.mean(self.vhead.forward(h)[..., 0], axis=-1)

    def batch_value_backward(self, dv):
        per_node = np.broadcast_to(dv[..., None, None],
                                   dv.shape + (self._n_nodes, 1)) / self._n_nodes
        self.vtrunk.backward(self.vhead.backward(np.ascontiguousarray(per_node)))

    # -- parameters -----------------------------------------------------------

    def policy_named_params(self):
        out = [("trunk." + n, p) for n, p in self.trunk.named_params()]
        out += [("mean_head." + n, p) for n, p in self.mean_head.named_params()]
        out.append(("log_std", self.log_std))
        return out

    def policy_named_grads(self):
        out = [("trunk." + n, g) for n, g in self.trunk.named_grads()]
        out += [("mean_head." + n, g) for n, g in self.mean_head.named_grads()]
        out.append(("log_std", self.g_log_std))
        return out

    def value_named_params(self):
        return ([("vtrunk." + n, p) for n, p in self.vtrunk.named_params()]
                + [("vhead." + n, p) for n, p in self.vhead.named_params()])

    def value_named_grads(self):
        return ([("vtrunk." + n, g) for n, g in self.vtrunk.named_grads()]
                + [("vhead." + n, g) for n, g in self.vhead.named_grads()])


class MorphologyPolicy:
    """Joint-wise topology choices and attribute deltas over a design."""

    def __init__(self, ncfg: NetConfig, rng):
        self.trunk = nets.GraphNet(N_ATTRS, ncfg.morph_gnn, rng)
        self.topo_head = nets.Linear(self.trunk.out_dim, TOPOLOGY_CHOICES, rng, gain=0.01)
        # conservative prior: prefer keeping the current topology until the
        # reward says otherwise
        self.topo_head.b[NO_CHANGE] = ncfg.nochange_bias
        self.delta_head = nets.Linear(self.trunk.out_dim, N_ATTRS, rng, gain=0.01)
        self.log_std = np.zeros(N_ATTRS)
        self.g_log_std = np.zeros(N_ATTRS)
        self.vtrunk = nets.GraphNet(N_ATTRS, ncfg.value_gnn, rng)
        self.vhead = nets.Linear(self.vtrunk.out_dim, 1, rng)

    def act(self, morph, rng):
        """Sample a MorphAction for the design; returns (action, log_prob, value)."""
        attrs = morph.attr_matrix()
        adj = morph.adjacency()
        topo, deltas, logp = self.sample(attrs, adj, rng)
        return MorphAction(topo, deltas), logp, self.value(attrs, adj)

    def sample(self, attrs, adj, rng):
        h = self.trunk.forward(attrs, adj)
        logits = self.topo_head.forward(h)
        topo = nets.categorical_sample(logits, rng)
        mean = self.delta_head.forward(h)
        deltas = nets.gaussian_sample(mean, self.log_std, rng)
        logp = float(np.sum(nets.categorical_logprob(logits, topo))
                     + np.sum(nets.gaussian_logprob(mean, self.log_std, deltas)))
        return topo, deltas, logp

    def logp(self, attrs, adj, topo, deltas):
        h = self.trunk.forward(attrs, adj)
        logits = self.topo_head.forward(h)
        mean = self.delta_head.forward(h)
        self._cache = (logits, mean, topo, deltas)
        return float(np.sum(nets.categorical_logprob(logits, topo))
                     + np.sum(nets.gaussian_logprob(mean, self.log_std, deltas)))

    def logp_backward(self, dlp):
        """Backward for the scalar logp just computed; dlp is its weight."""
        logits, mean, topo, deltas = self._cache
        n = logits.shape[0]
        dlogits = nets.categorical_logprob_backward(logits, topo, np.full(n, dlp))
        dmean, dls = nets.gaussian_logprob_backward(
            mean, self.log_std, deltas, np.full(n, dlp))
        self.g_log_std += dls.sum(axis=0)
        dh = self.topo_head.backward(dlogits) + self.delta_head.backward(dmean)
        self.trunk.backward(dh)

    def value(self, attrs, adj):
        h = self.vtrunk.forward(attrs, adj)
        self._vn_nodes = h.shape[0]
        return float(np.mean(self.vhead.forward(h)[..., 0]))

    def value_backward(self, dv):
        n = self._vn_nodes
        per_node = np.full((n, 1), dv / n)
        self.vtrunk.backward(self.vhead.backward(per_node))

    def policy_named_params(self):
        out = [("trunk." + n, p) for n, p in self.trunk.named_params()]
        out += [("topo_head." + n, p) for n, p in self.topo_head.named_params()]
        out += [("delta_head." + n, p) for n, p in self.delta_head.named_params()]
        out.append(("log_std", self.log_std))
        return out

    def policy_named_grads(self):
        out = [("trunk." + n, g) for n, g in self.trunk.named_grads()]
        out += [("topo_head." + n, g) for n, g in self.topo_head.named_grads()]
        out += [("delta_head." + n, g) for n, g in self.delta_head.named_grads()]
        out.append(("log_std", self.g_log_std))
        return out

    def value_named_params(self):
        return ([("vtrunk." + n, p) for n, p in self.vtrunk.named_params()]
                + [("vhead." + n, p) for n, p in self.vhead.named_params()])

    def value_named_grads(self):
        return ([("vtrunk." + n, g) for n, g in self.vtrunk.named_grads()]
                + [("vhead." + n, g) for n, g in self.vhead.named_grads()])


class EnvironmentPolicy:
    """Deltas on the terrain parameter tuple, conditioned on the design."""

    def __init__(self, theta_dim, ncfg: NetConfig, rng):
        self.theta_dim = theta_dim
        self.delta_scale = ncfg.env_delta_scale
        self.encoder = nets.GraphNet(N_ATTRS, ncfg.value_gnn, rng)
        emb = self.encoder.out_dim
        self.mlp = nets.Mlp((emb + theta_dim,) + tuple(ncfg.env_mlp) + (theta_dim,),
                            rng, final_gain=0.01)
        self.log_std = np.zeros(theta_dim)
        self.g_log_std = np.zeros(theta_dim)
        self.vencoder = nets.GraphNet(N_ATTRS, ncfg.value_gnn, rng)
        self.vmlp = nets.Mlp((self.vencoder.out_dim + theta_dim,) + tuple(ncfg.value_mlp) + (1,), rng)

    def act(self, morph, theta_norm, rng, deterministic=False):
        """Sample a parameter delta; returns (delta_sample, new_theta_norm, log_prob, value).

        new_theta_norm is the post-action normalized parameter vector, already
        clipped into bounds; log_prob describes the unclipped sample.
        """
        attrs = morph.attr_matrix()
        adj = morph.adjacency()
        mean = self.forward_mean(attrs, adj, theta_norm)
        c = mean.copy() if deterministic else nets.gaussian_sample(mean, self.log_std, rng)
        logp = float(nets.gaussian_logprob(mean, self.log_std, c))
        new_norm = np.clip(theta_norm + self.delta_scale * c, -1.0, 1.0)
        return c, new_norm, logp, self.value(attrs, adj, theta_norm)

    def forward_mean(self, attrs, adj, theta_norm):
        h = self.encoder.forward(attrs, adj)
        self._n_nodes = h.shape[0]
        pooled = h.mean(axis=0)
        return self.mlp.forward(np.concatenate([pooled, theta_norm]))

    def logp(self, attrs, adj, theta_norm, c):
        mean = self.forward_mean(attrs, adj, theta_norm)
        self._cache = (mean, c)
        return float(nets.gaussian_logprob(mean, self.log_std, c))

    def logp_backward(self, dlp):
        mean, c = self._cache
        dmean, dls = nets.gaussian_logprob_backward(mean, self.log_std, c, np.array(dlp))
        self.g_log_std += dls
        dx = self.mlp.backward(dmean)
        dpooled = dx[:self.encoder.out_dim]
        per_node = np.tile(dpooled / self._n_nodes, (self._n_nodes, 1))
        self.encoder.backward(per_node)

    def value(self, attrs, adj, theta_norm):
        h = self.vencoder.forward(attrs, adj)
        self._vn_nodes = h.shape[0]
        pooled = h.mean(axis=0)
        return float(self.vmlp.forward(np.concatenate([pooled, theta_norm]))[0])

    def value_backward(self, dv):
        dx = self.vmlp.backward(np.array([dv]))
        dpooled = dx[:self.vencoder.out_dim]
        per_node = np.tile(dpooled / self._vn_nodes, (self._vn_nodes, 1))
        self.vencoder.backward(per_node)

    def policy_named_params(self):
        out = [("encoder." + n, p) for n, p in self.encoder.named_params()]
        out += [("mlp." + n, p) for n, p in self.mlp.named_params()]
        out.append(("log_std", self.log_std))
        return out

    def policy_named_grads(self):
        out = [("encoder." + n, g) for n, g in self.encoder.named_grads()]
        out += [("mlp." + n, g) for n, g in self.mlp.named_grads()]
        out.append(("log_std", self.g_log_std))
        return out

    def value_named_params(self):
        return ([("vencoder." + n, p) for n, p in self.vencoder.named_params()]
                + [("vmlp." + n, p) for n, p in self.vmlp.named_params()])

    def value_named_grads(self):
        return ([("vencoder." + n, g) for n, g in self.vencoder.named_grads()]
                + [("vmlp." + n, g) for n, g in self.vmlp.named_grads()])
