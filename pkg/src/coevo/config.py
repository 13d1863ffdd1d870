"""Configuration for the co-evolution lab.

Everything tunable lives here as plain dataclasses with JSON round-tripping.
`ExperimentConfig.default(env_kind)` produces the desk-scale defaults used by
the test suite; `validate()` returns a list of human-readable problems so the
CLI can emit them all at once.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

ROUGH_TERRAIN = "rough_terrain"
GAP_CROSSER = "gap_crosser"
ENV_KINDS = (ROUGH_TERRAIN, GAP_CROSSER)

ABLATION_MODES = (
    "original",
    "periodic_envs_random",
    "fixed_envs_initial",
    "fixed_envs_final",
    "random_morph",
    "fixed_morph_initial",
    "fixed_morph_final",
    "fixed_morph_and_envs_initial",
    "fixed_update_window",
    "reward_i",
    "reward_ii",
    "reward_iii",
)


class ConfigError(ValueError):
    """Raised when a config document cannot be parsed into a valid config."""


# ---------------------------------------------------------------------------
# Terrain / environment parameters
# ---------------------------------------------------------------------------

@dataclass
class TerrainConfig:
    """Bounds and generation constants for parameterized terrain."""

    # rough terrain: bump field from a random Gaussian mixture
    max_height_cap: float = 2.4           # amplitude cap (world units)
    variance_lo: float = 2.4              # admissible spread-parameter range
    variance_hi: float = 7.2
    components_per_50: float = 8.0        # mixture components per 50 world units
    sigma_base: float = 0.15              # bump width floor (world units)
    sigma_per_variance: float = 0.15      # width range grows with the spread parameter

    # gap crosser: flat ledges at fixed height with periodic bottomless gaps
    gap_lo: float = 0.5
    gap_hi: float = 3.0
    gap_period: float = 6.0
    gap_base_height: float = 0.2
    gap_start: float = 3.0                # first gap begins here, keeping x=0 solid

    # sampling grid
    span_lo: float = -20.0
    span_hi: float = 120.0
    x_spacing: float = 0.1

    # reporting: roughness = std of samples over this window
    roughness_lo: float = 0.0
    roughness_hi: float = 50.0


@dataclass
class AttrRanges:
    """Physical ranges behind the normalized [-1, 1] joint attributes.

    attrs = [bone angle, bone length, bone size, motor gear, joint range];
    normalized 0 maps to the middle of each range (the default for new joints).
    """

    angle_span: float = math.pi           # rest direction offset, +-span
    length_lo: float = 0.6
    length_hi: float = 2.6
    size_lo: float = 0.03
    size_hi: float = 0.09
    gear_lo: float = 4.0
    gear_hi: float = 40.0
    range_lo: float = 0.3 * math.pi       # hinge limit, +-range
    range_hi: float = 1.0 * math.pi


@dataclass
class MorphConfig:
    node_cap: int = 16
    child_cap: int = 3
    num_lv1: int = 2                      # level-1 joints on the starting agent
    delta_cap: float = 0.1                # per-step attribute delta bound
    attrs: AttrRanges = field(default_factory=AttrRanges)


@dataclass
class SimConfig:
    """Constants of the planar articulated world."""

    control_dt: float = 0.008             # rough terrain; gap crosser uses 0.08
    substeps: int = 8
    gravity: float = 9.8
    density: float = 1.0                  # bone mass per unit of (length x width)
    min_link_mass: float = 0.05
    head_radius: float = 0.25
    head_mass: float = 2.0
    clearance: float = 1.75               # root placed this far above terrain at reset
    alive_bonus: float = 1.0              # gap crosser uses 0.1
    terminate_root_z: float = 1.4         # gap crosser uses 1.5

    contact_kn: float = 3000.0            # normal spring
    contact_cn: float = 30.0              # normal damping
    contact_ct: float = 30.0              # tangential viscosity
    friction_mu: float = 1.0              # Coulomb cap
    contact_fn_cap: float = 500.0         # normal-force ceiling, bounds contact impulses
    joint_damping: float = 1.5
    armature: float = 0.02              # rotor inertia added to each hinge
    limit_stiffness: float = 60.0
    limit_damping: float = 2.0
    root_rate_cap: float = 50.0           # physical rate limits, far above gait speeds
    hinge_rate_cap: float = 40.0

    episode_horizon: int = 1000
    instability_cap: float = 1e3          # any |state| beyond this aborts the episode
    slip_tolerance: float = 1e-3


def sim_defaults_for(env_kind):
    sim = SimConfig()
    if env_kind == GAP_CROSSER:
        sim.control_dt = 0.08
        sim.alive_bonus = 0.1
        sim.terminate_root_z = 1.5
    return sim


# ---------------------------------------------------------------------------
# Networks / PPO / co-evolution schedule
# ---------------------------------------------------------------------------

@dataclass
class NetConfig:
    control_gnn: tuple = (64, 64, 64)
    morph_gnn: tuple = (256, 256, 256)
    env_mlp: tuple = (200, 200)
    value_gnn: tuple = (64, 64, 64)
    value_mlp: tuple = (512, 256)
    nochange_bias: float = 2.0            # conservative prior on the topology head
    env_delta_scale: float = 0.1          # env action -> normalized parameter delta


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.95
    gae_lambda: float = 0.99
    iterations_per_batch: int = 4         # reference-scale value: 10
    batch_size: int = 4096                # reference-scale value: 50000
    minibatch_size: int = 256             # reference-scale value: 2048
    lr_control: float = 5e-5
    lr_morph: float = 5e-5
    lr_env: float = 3e-4
    lr_value: float = 3e-4
    grad_clip: float = 0.5
    normalize_advantages: bool = True

    def validate(self, problems, prefix="ppo"):
        if not (0.0 < self.gamma <= 1.0):
            problems.append(f"{prefix}.gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            problems.append(f"{prefix}.gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.clip <= 0.0:
            problems.append(f"{prefix}.clip must be > 0, got {self.clip}")
        if self.minibatch_size <= 0 or self.batch_size <= 0:
            problems.append(f"{prefix}.batch/minibatch sizes must be positive")
        if self.iterations_per_batch <= 0:
            problems.append(f"{prefix}.iterations_per_batch must be positive")


@dataclass
class CoevoConfig:
    budget: int = 500_000                 # control-phase environment steps
    phase_steps: int = 16384              # steps per control phase between co-evo steps
    window_morphs: int = 3                # evaluation-window history sizes
    window_envs: int = 4
    eval_episodes: int = 4
    eval_horizon: int = 256
    threshold_scale: float = 0.05         # thresholds = scale * running mean |return|
    threshold_abs: float | None = None    # set to use absolute thresholds instead
    running_stat_decay: float = 0.9
    action_cost_weight: float = 0.01
    meta_batch: int = 16                  # decisions per morphology/env policy update
    meta_episode_len: int = 16            # decision-chain cut for GAE bootstrapping
    checkpoint_every_steps: int = 0       # 0 = final checkpoint only


@dataclass
class AblationConfig:
    mode: str = "original"
    fixed_window_period: int = 2          # co-evo steps between forced changes
    source_checkpoint: str | None = None  # for fixed_*_final modes


@dataclass
class EvalConfig:
    n_envs: int = 12
    seed: int = 7777
    episodes: int = 1                     # evaluation is deterministic


# ---------------------------------------------------------------------------
# Experiment root
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    env_kind: str = ROUGH_TERRAIN
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs/experiment"
    max_workers: int = 1
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    morph: MorphConfig = field(default_factory=MorphConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    coevo: CoevoConfig = field(default_factory=CoevoConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def default(cls, env_kind=ROUGH_TERRAIN):
        cfg = cls(env_kind=env_kind)
        cfg.sim = sim_defaults_for(env_kind)
        return cfg

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self):
        return _asdict(self)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        try:
            cfg = _fromdict(cls, doc, path="")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    # -- validation ------------------------------------------------------------

    def validate(self):
        """Return a list of problems; empty means the config is usable."""
        p = []
        if self.env_kind not in ENV_KINDS:
            p.append(f"env_kind must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.ablation.mode not in ABLATION_MODES:
            p.append(f"ablation.mode must be one of {ABLATION_MODES}, got {self.ablation.mode!r}")
        if self.ablation.mode in ("fixed_envs_final", "fixed_morph_final") and not self.ablation.source_checkpoint:
            p.append(f"ablation.mode {self.ablation.mode!r} requires ablation.source_checkpoint")
        if self.ablation.fixed_window_period <= 0:
            p.append("ablation.fixed_window_period must be positive")
        if not self.seeds:
            p.append("seeds must be non-empty")
        if self.coevo.budget < 0:
            p.append("coevo.budget must be >= 0")
        if self.coevo.phase_steps <= 0:
            p.append("coevo.phase_steps must be positive")
        if self.coevo.window_morphs <= 0 or self.coevo.window_envs <= 0:
            p.append("coevo.window_morphs/window_envs must be positive")
        if self.morph.node_cap < 1:
            p.append("morph.node_cap must be >= 1")
        if not (0 <= self.morph.num_lv1 <= self.morph.child_cap):
            p.append(f"morph.num_lv1 must be in [0, {self.morph.child_cap}]")
        t = self.terrain
        if t.max_height_cap < 0:
            p.append("terrain.max_height_cap must be >= 0")
        if t.variance_lo > t.variance_hi:
            p.append("terrain.variance_lo must be <= variance_hi")
        if t.gap_lo > t.gap_hi or t.gap_lo <= 0:
            p.append("terrain gap bounds must satisfy 0 < gap_lo <= gap_hi")
        if t.gap_hi >= t.gap_period:
            p.append("terrain.gap_hi must be smaller than gap_period")
        if t.span_lo >= t.span_hi or t.x_spacing <= 0:
            p.append("terrain span/x_spacing invalid")
        if self.sim.substeps <= 0 or self.sim.control_dt <= 0:
            p.append("sim.substeps and sim.control_dt must be positive")
        self.ppo.validate(p)
        return p

    def output_root(self):
        """Output directory, honoring the single supported env override."""
        return os.environ.get("COEVO_OUTPUT_DIR", self.output_dir)


# ---------------------------------------------------------------------------
# dataclass <-> dict plumbing
# ---------------------------------------------------------------------------

def _asdict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _asdict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_asdict(v) for v in obj]
    return obj


def _fromdict(cls, doc, path):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in doc.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
        f = names[key]
        if dataclasses.is_dataclass(f.type) or (isinstance(f.default_factory, type) and dataclasses.is_dataclass(f.default_factory)):
            sub_cls = f.default_factory if f.default_factory is not dataclasses.MISSING else f.type
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            kwargs[key] = _fromdict(sub_cls, value, path + key + ".")
        elif isinstance(value, list) and isinstance(getattr(cls(), key, None), tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)
