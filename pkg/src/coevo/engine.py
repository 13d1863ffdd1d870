"""The co-evolution engine.

Training alternates two phases:

* a control phase: the control policy collects a fixed number of environment
  steps on the current (morphology, terrain) pair and is updated with PPO;
* a co-evolution step: the control policy is re-evaluated over a small
  history of recent morphologies and terrains (the evaluation window), the
  morphology reward (average return improvement of the newest design over
  its predecessor across recent terrains, minus an action cost) and the
  environment reward (change in cross-terrain learning progress) are
  computed, and whichever threshold criterion fires mutates either the
  morphology or the terrain parameters - never both in one step.

All randomness flows from one seed; two runs with the same config and seed
produce byte-identical metrics logs.
"""

import copy
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import morphology as morphlib
from . import nets, ppo
from .config import ExperimentConfig
from .policies import (ControlPolicy, EnvironmentPolicy, MorphologyPolicy,
                       denormalize_theta, graph_features, normalize_theta)
from .sim2d import World, generate_terrain, observation_width, roughness
from .sim2d.terrain import EnvParams, easy_corner, param_bounds


# ---------------------------------------------------------------------------
# metrics log
# ---------------------------------------------------------------------------

def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


class MetricsLogger:
    """Append-only JSONL event log with deterministic formatting."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w") if path else None

    def log(self, record):
        if self._fh is not None:
            self._fh.write(json.dumps(_jsonify(record), sort_keys=True) + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_metrics(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: corrupt metrics record: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# reward formulas (pure; the engine only manages their memory)
# ---------------------------------------------------------------------------

def morph_reward_improvement(matrix, last_cost, cost_weight):
    """Mean return improvement of the newest design over its predecessor
    across the window's environments, minus the weighted action cost."""
    if matrix.shape[0] >= 2:
        improvement = float(np.mean(matrix[-1] - matrix[-2]))
    else:
        improvement = 0.0
    return improvement - cost_weight * last_cost


def env_progress(matrix):
    """Learning progress: newest design's return edge of the newest
    environment over the previous one."""
    if matrix.shape[1] >= 2:
        return float(matrix[-1, -1] - matrix[-1, -2])
    return 0.0


def env_reward_progress(matrix, progress_prev):
    """Change of learning progress between consecutive co-evolution steps."""
    progress = env_progress(matrix)
    return progress - progress_prev, progress


def morph_progress(matrix):
    if matrix.shape[0] >= 2:
        return float(matrix[-1, -1] - matrix[-2, -1])
    return 0.0


def morph_reward_progress(matrix, progress_prev):
    """Ablation variant: the progress-difference structure applied to
    morphology steps."""
    progress = morph_progress(matrix)
    return progress - progress_prev, progress


def env_reward_improvement(matrix, last_cost, cost_weight):
    """Ablation variant: the cross-average-improvement structure applied to
    environment steps (averaged over the window's designs)."""
    if matrix.shape[1] >= 2:
        improvement = float(np.mean(matrix[:, -1] - matrix[:, -2]))
    else:
        improvement = 0.0
    return improvement - cost_weight * last_cost


# ---------------------------------------------------------------------------
# ablation strategy
# ---------------------------------------------------------------------------

@dataclass
class Strategy:
    """How the co-evolution step behaves; derived from the ablation mode."""

    morph_source: str = "policy"          # policy | random | fixed
    env_source: str = "policy"            # policy | random | fixed
    trigger: str = "dynamic"              # dynamic | fixed_period
    period: int = 2
    train_morph: bool = True
    train_env: bool = True
    morph_reward_form: str = "improvement"   # improvement | progress
    env_reward_form: str = "progress"        # progress | improvement
    init_morph: object = None             # override starting design
    init_theta: object = None             # override starting parameters


def resolve_strategy(cfg: ExperimentConfig, checkpoint_loader=None):
    mode = cfg.ablation.mode
    s = Strategy(period=cfg.ablation.fixed_window_period)
    if mode == "original":
        pass
    elif mode == "periodic_envs_random":
        s.env_source = "random"
        s.train_env = False
    elif mode == "fixed_envs_initial":
        s.env_source = "fixed"
        s.train_env = False
    elif mode == "fixed_envs_final":
        s.env_source = "fixed"
        s.train_env = False
        s.init_theta = checkpoint_loader("theta")
    elif mode == "random_morph":
        s.morph_source = "random"
        s.train_morph = False
    elif mode == "fixed_morph_initial":
        s.morph_source = "fixed"
        s.train_morph = False
    elif mode == "fixed_morph_final":
        s.morph_source = "fixed"
        s.train_morph = False
        s.init_morph = checkpoint_loader("morphology")
    elif mode == "fixed_morph_and_envs_initial":
        s.morph_source = "fixed"
        s.env_source = "fixed"
        s.train_morph = False
        s.train_env = False
    elif mode == "fixed_update_window":
        s.trigger = "fixed_period"
    elif mode == "reward_i":
        s.train_morph = False
    elif mode == "reward_ii":
        s.morph_reward_form = "progress"
    elif mode == "reward_iii":
        s.env_reward_form = "improvement"
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")
    return s


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

@dataclass
class EnvRecord:
    params: EnvParams
    seed: int
    field: object
    theta_norm: np.ndarray


class Engine:
    """Owns all mutable training state for one seed."""

    def __init__(self, cfg: ExperimentConfig, seed, metrics_path=None, strategy=None):
        self.cfg = cfg
        self.seed = int(seed)
        self.strategy = strategy or resolve_strategy(cfg)
        self.log = MetricsLogger(metrics_path)

        ss = np.random.SeedSequence(self.seed)
        init_ss, ctrl_ss, shuffle_ss, meta_ss = ss.spawn(4)
        self.rng_init = np.random.default_rng(init_ss)
        self.rng_control = np.random.default_rng(ctrl_ss)
        self.rng_shuffle = np.random.default_rng(shuffle_ss)
        self.rng_meta = np.random.default_rng(meta_ss)

        obs_w = observation_width(cfg.env_kind)
        self.lo, self.hi = param_bounds(cfg.env_kind, cfg.terrain)
        theta_dim = len(self.lo)
        self.control = ControlPolicy(obs_w, cfg.nets, self.rng_init)
        self.morph_policy = MorphologyPolicy(cfg.nets, self.rng_init)
        self.env_policy = EnvironmentPolicy(theta_dim, cfg.nets, self.rng_init)

        p = cfg.ppo
        self.adam_control = ppo.Adam(self.control.policy_named_params(), p.lr_control)
        self.adam_control_v = ppo.Adam(self.control.value_named_params(), p.lr_value)
        self.adam_morph = ppo.Adam(self.morph_policy.policy_named_params(), p.lr_morph)
        self.adam_morph_v = ppo.Adam(self.morph_policy.value_named_params(), p.lr_value)
        self.adam_env = ppo.Adam(self.env_policy.policy_named_params(), p.lr_env)
        self.adam_env_v = ppo.Adam(self.env_policy.value_named_params(), p.lr_value)

        if self.strategy.init_morph is not None:
            self.morph = self.strategy.init_morph
        else:
            self.morph = morphlib.initial_morphology(cfg.morph.num_lv1, cfg.morph.child_cap)
        self.initial_morph = self.morph

        if self.strategy.init_theta is not None:
            params0 = EnvParams.from_vector(cfg.env_kind, np.asarray(self.strategy.init_theta))
        else:
            params0 = easy_corner(cfg.env_kind, cfg.terrain)
        self.env_counter = 0
        self.env = self._make_env(params0)
        self.training_thetas = [params0.as_tuple()]

        self.window_morphs = deque(maxlen=cfg.coevo.window_morphs)
        self.window_envs = deque(maxlen=cfg.coevo.window_envs)
        self.window_morphs.append(self.morph)
        self.window_envs.append(self.env)

        self.t = 0                     # control-phase environment steps
        self.coevo_steps = 0
        self.morph_changes = 0
        self.env_changes = 0
        self.fixed_window_turn = 0     # alternates morph/env in fixed-period mode
        self.progress_prev = 0.0       # environment-reward memory
        self.morph_progress_prev = 0.0 # memory for the swapped morphology reward
        self.last_morph_cost = 0.0
        self.last_env_cost = 0.0
        self.running_return = None
        self.morph_buffer = []
        self.env_buffer = []
        self.morph_decisions = 0
        self.env_decisions = 0

    # -- environment helpers ---------------------------------------------------

    def _terrain_seed(self, counter):
        return int(np.random.SeedSequence([self.seed, 0x7E22, counter]).generate_state(1)[0])

    def _make_env(self, params):
        seed = self._terrain_seed(self.env_counter)
        field = generate_terrain(params, seed, self.cfg.terrain)
        theta_norm = normalize_theta(params.vector(), self.lo, self.hi)
        return EnvRecord(params, seed, field, theta_norm)

    def _world(self, morph, env):
        return World(morph, env.field, self.cfg.env_kind, self.cfg.sim,
                     self.cfg.morph, self.cfg.terrain)

    # -- control phase ---------------------------------------------------------

    def train_control_phase(self, n_steps):
        """Collect n_steps on the current pair, updating the control policy
        every ppo.batch_size steps (plus the phase-end remainder)."""
        if n_steps <= 0:
            return
        cfg = self.cfg
        world = self._world(self.morph, self.env)
        world.reset()
        obs = world.observe()
        attrs = self.morph.attr_matrix()
        adj = self.morph.adjacency()

        feats_buf, act_buf, logp_buf, val_buf, rew_buf, done_buf = [], [], [], [], [], []
        ep_return = 0.0
        ep_returns = []

        collected = 0
        while collected < n_steps:
            feats = graph_features(obs, attrs)
            action, logp, value = self.control.act(obs, attrs, adj, self.rng_control)
            result = world.step(action)
            feats_buf.append(feats)
            act_buf.append(action)
            logp_buf.append(logp)
            val_buf.append(value)
            rew_buf.append(result.reward)
            done_buf.append(result.done)
            ep_return += result.reward
            collected += 1
            self.t += 1
            if result.done:
                ep_returns.append(ep_return)
                ep_return = 0.0
                world.reset()
                obs = world.observe()
            else:
                obs = result.observation

            if len(rew_buf) >= cfg.ppo.batch_size or collected == n_steps:
                if done_buf[-1]:
                    bootstrap = 0.0
                else:
                    bootstrap = self.control.value(graph_features(obs, attrs), adj)
                self._update_control(np.array(feats_buf), adj, np.array(act_buf),
                                     np.array(logp_buf), np.array(val_buf),
                                     np.array(rew_buf), np.array(done_buf),
                                     bootstrap, ep_returns)
                feats_buf, act_buf, logp_buf, val_buf, rew_buf, done_buf = [], [], [], [], [], []
                ep_returns = []

    def _update_control(self, feats, adj, actions, old_logp, values, rewards, dones,
                        bootstrap, ep_returns):
        adv, ret = ppo.compute_gae(rewards, values, bootstrap, dones,
                                   self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda)
        adapter = ppo.ControlAdapter(self.control, feats, adj, actions, old_logp,
                                     adv, ret, self.adam_control, self.adam_control_v)
        stats = ppo.ppo_update(adapter, self.cfg.ppo, self.rng_shuffle)
        rec = {"step": self.t, "event": "ppo_update", "policy": "control"}
        rec.update(stats.to_dict())
        rec["episodes"] = len(ep_returns)
        rec["mean_return"] = float(np.mean(ep_returns)) if ep_returns else None
        self.log.log(rec)

    # -- evaluation window -------------------------------------------------------

    def eval_episode_return(self, morph, env, horizon):
        """Deterministic (mean-action) episode return for one pair."""
        world = self._world(morph, env)
        world.reset()
        obs = world.observe()
        attrs = morph.attr_matrix()
        adj = morph.adjacency()
        total = 0.0
        for _ in range(horizon):
            action, _, _ = self.control.act(obs, attrs, adj, None, deterministic=True)
            result = world.step(action)
            total += result.reward
            if result.done:
                break
            obs = result.observation
        return total

    def short_eval_window(self):
        """Returns matrix over the window: rows = designs, cols = environments.

        Evaluation is deterministic, so the configured eval_episodes would all
        repeat the same trajectory; each pair is simulated once and that value
        stands for their mean.
        """
        horizon = self.cfg.coevo.eval_horizon
        matrix = np.zeros((len(self.window_morphs), len(self.window_envs)))
        for i, morph in enumerate(self.window_morphs):
            for j, env in enumerate(self.window_envs):
                matrix[i, j] = self.eval_episode_return(morph, env, horizon)
        return matrix

    # -- co-evolution step ---------------------------------------------------------

    def co_evo_step(self):
        cfg = self.cfg.coevo
        matrix = self.short_eval_window()
        mean_abs = float(np.mean(np.abs(matrix)))
        if self.running_return is None:
            self.running_return = mean_abs
        else:
            d = cfg.running_stat_decay
            self.running_return = d * self.running_return + (1.0 - d) * mean_abs
        if cfg.threshold_abs is not None:
            delta_m = delta_e = cfg.threshold_abs
        else:
            delta_m = delta_e = cfg.threshold_scale * self.running_return

        progress_prev = self.progress_prev
        morph_progress_prev = self.morph_progress_prev
        if self.strategy.morph_reward_form == "improvement":
            r_m = morph_reward_improvement(matrix, self.last_morph_cost,
                                           cfg.action_cost_weight)
        else:
            r_m, self.morph_progress_prev = morph_reward_progress(matrix, morph_progress_prev)
        if self.strategy.env_reward_form == "progress":
            r_e, self.progress_prev = env_reward_progress(matrix, progress_prev)
        else:
            r_e = env_reward_improvement(matrix, self.last_env_cost,
                                         cfg.action_cost_weight)

        self.log.log({
            "step": self.t, "event": "sew_eval",
            "returns_matrix": matrix, "r_m": r_m, "r_e": r_e,
            "delta_m": delta_m, "delta_e": delta_e,
            "morph_cost": self.last_morph_cost, "env_cost": self.last_env_cost,
            "action_cost_weight": cfg.action_cost_weight,
            "progress_prev": progress_prev,
            "morph_progress_prev": morph_progress_prev,
            "theta_E": self.env.params.vector(),
            "morph_node_count": len(self.morph),
            "roughness": roughness(self.env.field, self.cfg.terrain),
        })

        morph_on = self.strategy.morph_source != "fixed"
        env_on = self.strategy.env_source != "fixed"
        if self.strategy.trigger == "fixed_period":
            fire = (self.coevo_steps + 1) % self.strategy.period == 0
            if fire:
                if morph_on and (not env_on or self.fixed_window_turn % 2 == 0):
                    self._morph_step(r_m)
                elif env_on:
                    self._env_step(r_e)
                self.fixed_window_turn += 1
        else:
            if morph_on and r_m <= delta_m:
                self._morph_step(r_m)
            elif env_on and r_e <= delta_e:
                self._env_step(r_e)
        self.coevo_steps += 1

    def _morph_step(self, r_m):
        mcfg = self.cfg.morph
        before = self.morph
        if self.strategy.morph_source == "random":
            n = len(before)
            action = morphlib.MorphAction(
                self.rng_meta.integers(0, morphlib.TOPOLOGY_CHOICES, n),
                self.rng_meta.uniform(-mcfg.delta_cap, mcfg.delta_cap,
                                      (n, morphlib.N_ATTRS)))
        else:
            action, logp, value = self.morph_policy.act(before, self.rng_meta)
            if self.strategy.train_morph:
                self.morph_decisions += 1
                done = (self.morph_decisions % self.cfg.coevo.meta_episode_len) == 0
                self.morph_buffer.append({
                    "attrs": before.attr_matrix(), "adj": before.adjacency(),
                    "topo": action.topology, "deltas": action.deltas,
                    "logp": logp, "value": value, "reward": r_m, "done": done,
                })
        new_morph, info = morphlib.apply_morph_action(
            before, action, mcfg.node_cap, mcfg.child_cap, mcfg.delta_cap)
        self.morph = new_morph
        self.last_morph_cost = info.action_cost
        self.window_morphs.append(new_morph)
        self.morph_changes += 1
        self.log.log({
            "step": self.t, "event": "morph_change", "r_m": r_m,
            "morph_node_count": len(new_morph), "action_cost": info.action_cost,
            "added": info.added, "deleted": info.deleted,
            "rejected_add": info.rejected_add, "rejected_del": info.rejected_del,
        })
        if self.strategy.train_morph and len(self.morph_buffer) >= self.cfg.coevo.meta_batch:
            self._update_morph_policy()

    def _env_step(self, r_e):
        before_env = self.env
        if self.strategy.env_source == "random":
            theta_norm = self.rng_meta.uniform(-1.0, 1.0, len(self.lo))
            self.last_env_cost = 0.0
        else:
            c, theta_norm, logp, value = self.env_policy.act(
                self.morph, before_env.theta_norm, self.rng_meta)
            self.last_env_cost = float(np.sum(c * c))
            if self.strategy.train_env:
                self.env_decisions += 1
                done = (self.env_decisions % self.cfg.coevo.meta_episode_len) == 0
                self.env_buffer.append({
                    "attrs": self.morph.attr_matrix(), "adj": self.morph.adjacency(),
                    "theta_norm": before_env.theta_norm.copy(), "c": c,
                    "logp": logp, "value": value, "reward": r_e, "done": done,
                })
        params = EnvParams.from_vector(
            self.cfg.env_kind, denormalize_theta(theta_norm, self.lo, self.hi))
        self.env_counter += 1
        self.env = self._make_env(params)
        self.training_thetas.append(params.as_tuple())
        self.window_envs.append(self.env)
        self.env_changes += 1
        self.log.log({
            "step": self.t, "event": "env_change", "r_e": r_e,
            "theta_E": params.vector(),
            "roughness": roughness(self.env.field, self.cfg.terrain),
        })
        if self.strategy.train_env and len(self.env_buffer) >= self.cfg.coevo.meta_batch:
            self._update_env_policy()

    # -- meta-policy updates ----------------------------------------------------

    def _meta_ppo_cfg(self, n):
        """Meta updates reuse the PPO config with whole-buffer minibatches."""
        c = copy.copy(self.cfg.ppo)
        c.minibatch_size = max(n, 1)
        return c

    def _update_morph_policy(self):
        buf = self.morph_buffer
        rewards = np.array([b["reward"] for b in buf])
        values = np.array([b["value"] for b in buf])
        dones = np.array([float(b["done"]) for b in buf])
        bootstrap = 0.0 if dones[-1] else self.morph_policy.value(
            self.morph.attr_matrix(), self.morph.adjacency())
        adv, ret = ppo.compute_gae(rewards, values, bootstrap, dones,
                                   self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda)
        adapter = ppo.PerSampleAdapter(
            self.morph_policy, buf,
            np.array([b["logp"] for b in buf]), adv, ret,
            self.adam_morph, self.adam_morph_v,
            logp_fn=lambda p, s: p.logp(s["attrs"], s["adj"], s["topo"], s["deltas"]),
            logp_bwd_fn=lambda p, s, w: p.logp_backward(w),
            value_fn=lambda p, s: p.value(s["attrs"], s["adj"]),
            value_bwd_fn=lambda p, s, w: p.value_backward(w))
        stats = ppo.ppo_update(adapter, self._meta_ppo_cfg(len(buf)), self.rng_shuffle)
        rec = {"step": self.t, "event": "ppo_update", "policy": "morph"}
        rec.update(stats.to_dict())
        self.log.log(rec)
        self.morph_buffer = []

    def _update_env_policy(self):
        buf = self.env_buffer
        rewards = np.array([b["reward"] for b in buf])
        values = np.array([b["value"] for b in buf])
        dones = np.array([float(b["done"]) for b in buf])
        bootstrap = 0.0 if dones[-1] else self.env_policy.value(
            self.morph.attr_matrix(), self.morph.adjacency(), self.env.theta_norm)
        adv, ret = ppo.compute_gae(rewards, values, bootstrap, dones,
                                   self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda)
        adapter = ppo.PerSampleAdapter(
            self.env_policy, buf,
            np.array([b["logp"] for b in buf]), adv, ret,
            self.adam_env, self.adam_env_v,
            logp_fn=lambda p, s: p.logp(s["attrs"], s["adj"], s["theta_norm"], s["c"]),
            logp_bwd_fn=lambda p, s, w: p.logp_backward(w),
            value_fn=lambda p, s: p.value(s["attrs"], s["adj"], s["theta_norm"]),
            value_bwd_fn=lambda p, s, w: p.value_backward(w))
        stats = ppo.ppo_update(adapter, self._meta_ppo_cfg(len(buf)), self.rng_shuffle)
        rec = {"step": self.t, "event": "ppo_update", "policy": "env"}
        rec.update(stats.to_dict())
        self.log.log(rec)
        self.env_buffer = []

    # -- main loop ----------------------------------------------------------------

    def train(self):
        budget = self.cfg.coevo.budget
        every = self.cfg.coevo.checkpoint_every_steps
        next_checkpoint = every if every > 0 else None
        while self.t < budget:
            phase = min(self.cfg.coevo.phase_steps, budget - self.t)
            self.train_control_phase(phase)
            self.co_evo_step()
            if next_checkpoint is not None and self.t >= next_checkpoint and self._ckpt_dir:
                self.save_checkpoint(f"{self._ckpt_dir}/checkpoint_{self.t}.npz")
                next_checkpoint += every
        self.log.close()
        return self

    _ckpt_dir = None

    def set_checkpoint_dir(self, path):
        self._ckpt_dir = path

    # -- checkpointing --------------------------------------------------------------

    def checkpoint_arrays(self):
        arrays = {}
        for prefix, named in (
                ("control/policy", self.control.policy_named_params()),
                ("control/value", self.control.value_named_params()),
                ("morph/policy", self.morph_policy.policy_named_params()),
                ("morph/value", self.morph_policy.value_named_params()),
                ("env/policy", self.env_policy.policy_named_params()),
                ("env/value", self.env_policy.value_named_params())):
            for name, arr in named:
                arrays[f"{prefix}/{name}"] = arr
        return arrays

    def save_checkpoint(self, path):
        meta = {
            "env_kind": self.cfg.env_kind,
            "seed": self.seed,
            "step": self.t,
            "coevo_steps": self.coevo_steps,
            "morphology": morphlib.to_dict(self.morph),
            "theta": [float(v) for v in self.env.params.vector()],
            "obs_width": observation_width(self.cfg.env_kind),
        }
        nets.save_checkpoint(path, self.checkpoint_arrays(), meta)

    def load_policy_arrays(self, arrays):
        for prefix, named in (
                ("control/policy", self.control.policy_named_params()),
                ("control/value", self.control.value_named_params()),
                ("morph/policy", self.morph_policy.policy_named_params()),
                ("morph/value", self.morph_policy.value_named_params()),
                ("env/policy", self.env_policy.policy_named_params()),
                ("env/value", self.env_policy.value_named_params())):
            for name, arr in named:
                arr[...] = arrays[f"{prefix}/{name}"]
