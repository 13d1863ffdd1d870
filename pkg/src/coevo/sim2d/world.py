"""World: one agent on one terrain, stepped deterministically.

The world owns the generalized-coordinate state, converts per-joint actions
into motor torques, computes the locomotion reward and termination rule for
its environment kind, and builds the zero-padded per-joint observation
matrix. All randomness lives outside; identical (morphology, terrain,
action sequence) produce bitwise-identical trajectories.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import GAP_CROSSER, ROUGH_TERRAIN, MorphConfig, SimConfig, TerrainConfig
from .. import morphology as morphlib
from .kernel import step_kernel
from .terrain import Heightfield


class SimulationError(ValueError):
    """Bad inputs to the simulator (shape or value errors, not instabilities)."""


def observation_width(env_kind):
    """Per-joint observation length: [angle, angular velocity] everywhere,
    plus height and planar velocity on the root, plus a gap phase variable."""
    return 6 if env_kind == GAP_CROSSER else 5


def denormalize(attr, lo, hi):
    """Map a [-1, 1] attribute onto [lo, hi]; 0 lands mid-range."""
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * attr


@dataclass
class BodyModel:
    """Flat-array compilation of a morphology against the physical ranges."""

    n: int
    ids: list
    order: np.ndarray        # traversal order, parents before children
    parent: np.ndarray       # body index of the parent, -1 for the head
    dof: np.ndarray          # generalized-coordinate index of the hinge, -1 for head
    theta0: np.ndarray
    length: np.ndarray
    radius: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    gear: np.ndarray
    qlim: np.ndarray
    anc_count: np.ndarray
    anc_dof: np.ndarray
    anc_body: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        self.dim = 3 + int(np.sum(self.dof >= 0))


def build_body_model(morph, mcfg: MorphConfig, sim: SimConfig) -> BodyModel:
    problems = morphlib.validate(morph, node_cap=mcfg.node_cap, child_cap=mcfg.child_cap)
    if problems:
        raise SimulationError("invalid morphology: " + "; ".join(problems))
    nodes = morph.nodes
    n = len(nodes)
    index = {node.id: i for i, node in enumerate(nodes)}
    ranges = mcfg.attrs

    parent = np.full(n, -1, dtype=np.int64)
    theta0 = np.zeros(n)
    length = np.zeros(n)
    radius = np.zeros(n)
    mass = np.zeros(n)
    inertia = np.zeros(n)
    gear = np.zeros(n)
    qlim = np.zeros(n)
    dof = np.full(n, -1, dtype=np.int64)

    head_idx = index[morph.head().id]
    hinge = 0
    for i, node in enumerate(nodes):
        if node.parent is None:
            radius[i] = sim.head_radius
            mass[i] = sim.head_mass
            inertia[i] = 0.5 * mass[i] * radius[i] ** 2
            continue
        parent[i] = index[node.parent]
        a = node.attrs
        offset = a[0] * ranges.angle_span
        # children of the head hang straight down at zero attrs
        theta0[i] = offset - 0.5 * math.pi if parent[i] == head_idx else offset
        length[i] = denormalize(a[1], ranges.length_lo, ranges.length_hi)
        radius[i] = denormalize(a[2], ranges.size_lo, ranges.size_hi)
        gear[i] = denormalize(a[3], ranges.gear_lo, ranges.gear_hi)
        qlim[i] = denormalize(a[4], ranges.range_lo, ranges.range_hi)
        mass[i] = max(sim.density * length[i] * 2.0 * radius[i], sim.min_link_mass)
        inertia[i] = mass[i] * (length[i] ** 2 / 12.0 + radius[i] ** 2 / 4.0)
        dof[i] = 3 + hinge
        hinge += 1

    # breadth-first traversal order so parents are always processed first
    order = [head_idx]
    frontier = [head_idx]
    while frontier:
        nxt = []
        for p in frontier:
            for i in range(n):
                if parent[i] == p:
                    order.append(i)
                    nxt.append(i)
        frontier = nxt
    order = np.array(order, dtype=np.int64)

    # ancestor tables (self first, then up the chain), hinge dofs only
    anc_count = np.zeros(n, dtype=np.int64)
    anc_dof = np.zeros((n, max(n, 1)), dtype=np.int64)
    anc_body = np.zeros((n, max(n, 1)), dtype=np.int64)
    for i in range(n):
        j = i
        c = 0
        while parent[j] >= 0:
            anc_dof[i, c] = dof[j]
            anc_body[i, c] = j
            c += 1
            j = parent[j]
        anc_count[i] = c

    return BodyModel(n=n, ids=[node.id for node in nodes], order=order, parent=parent,
                     dof=dof, theta0=theta0, length=length, radius=radius, mass=mass,
                     inertia=inertia, gear=gear, qlim=qlim, anc_count=anc_count,
                     anc_dof=anc_dof, anc_body=anc_body)


@dataclass
class WorldState:
    """Snapshot of the world: everything the dynamics depend on."""

    q: np.ndarray
    qd: np.ndarray
    link_pos: np.ndarray     # per-link center of mass
    link_angle: np.ndarray
    link_vel: np.ndarray
    link_angvel: np.ndarray
    joint_angle: np.ndarray  # hinges only, canonical node order minus the head
    joint_angvel: np.ndarray
    sim_time: float
    root_x: float
    root_z: float


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class World:
    """One (morphology, terrain) pair with deterministic stepping."""

    def __init__(self, morph, terrain: Heightfield, env_kind=ROUGH_TERRAIN,
                 sim: SimConfig = None, mcfg: MorphConfig = None,
                 tcfg: TerrainConfig = None):
        if env_kind not in (ROUGH_TERRAIN, GAP_CROSSER):
            raise SimulationError(f"unknown env_kind {env_kind!r}")
        if not np.all(np.isfinite(terrain.samples)):
            raise SimulationError("terrain samples must be finite")
        self.env_kind = env_kind
        self.sim = sim or SimConfig()
        self.mcfg = mcfg or MorphConfig()
        self.tcfg = tcfg or TerrainConfig()
        self.terrain = terrain
        self.morph = morph
        self.body = build_body_model(morph, self.mcfg, self.sim)
        self.q = np.zeros(self.body.dim)
        self.qd = np.zeros(self.body.dim)
        self.step_count = 0
        self.terminated = False
        self._dt_sub = self.sim.control_dt / self.sim.substeps

    @property
    def n_joints(self):
        return self.body.n

    # -- lifecycle -------------------------------------------------------------

    def reset(self):
        """Place the agent at x = 0, root above the terrain, all velocities zero."""
        ground = float(self.terrain.height_at(0.0))
        root_z = ground + self.sim.clearance
        if not np.isfinite(root_z):
            raise SimulationError("cannot place agent: terrain height not finite at x=0")
        self.q[:] = 0.0
        self.q[1] = root_z
        self.qd[:] = 0.0
        self.step_count = 0
        self.terminated = False
        return self.state()

    def state(self) -> WorldState:
        pos, ang, vel, angvel = self._link_kinematics()
        hinges = self.body.dof >= 0
        return WorldState(
            q=self.q.copy(), qd=self.qd.copy(),
            link_pos=pos, link_angle=ang, link_vel=vel, link_angvel=angvel,
            joint_angle=self.q[3:].copy(), joint_angvel=self.qd[3:].copy(),
            sim_time=self.step_count * self.sim.control_dt,
            root_x=float(self.q[0]), root_z=float(self.q[1]),
        )

    def _link_kinematics(self):
        b = self.body
        ang = np.zeros(b.n)
        w = np.zeros(b.n)
        pos = np.zeros((b.n, 2))
        vel = np.zeros((b.n, 2))
        tip = np.zeros((b.n, 2))
        vtip = np.zeros((b.n, 2))
        for k in b.order:
            if b.parent[k] < 0:
                ang[k] = self.q[2]
                w[k] = self.qd[2]
                pos[k] = tip[k] = self.q[:2]
                vel[k] = vtip[k] = self.qd[:2]
            else:
                p = b.parent[k]
                ang[k] = ang[p] + b.theta0[k] + self.q[b.dof[k]]
                w[k] = w[p] + self.qd[b.dof[k]]
                a = tip[p]
                d = np.array([math.cos(ang[k]), math.sin(ang[k])])
                pos[k] = a + 0.5 * b.length[k] * d
                tip[k] = a + b.length[k] * d
                r_com = pos[k] - a
                r_tip = tip[k] - a
                vel[k] = vtip[p] + w[k] * np.array([-r_com[1], r_com[0]])
                vtip[k] = vtip[p] + w[k] * np.array([-r_tip[1], r_tip[0]])
        return pos, ang, vel, w

    # -- stepping ----------------------------------------------------------------

    def step(self, torques) -> StepResult:
        torques = np.asarray(torques, dtype=np.float64)
        if torques.shape != (self.body.n,):
            raise SimulationError(
                f"torque vector must have length {self.body.n}, got {torques.shape}")
        if not np.all(np.isfinite(torques)):
            raise SimulationError("torques must be finite")
        if self.terminated:
            raise SimulationError("step() called on a terminated episode; reset() first")

        x_before = self.q[0]
        status = step_kernel(
            self.q, self.qd, torques,
            self.body.order, self.body.parent, self.body.dof, self.body.theta0,
            self.body.length, self.body.radius, self.body.mass, self.body.inertia,
            self.body.gear, self.body.qlim, self.body.anc_count, self.body.anc_dof,
            self.body.anc_body,
            self.terrain.x0, self.terrain.x_spacing, self.terrain.samples,
            self.terrain.gap_mask,
            self.sim.substeps, self._dt_sub, self.sim.gravity,
            self.sim.contact_kn, self.sim.contact_cn, self.sim.contact_ct,
            self.sim.friction_mu, self.sim.contact_fn_cap, self.sim.armature,
            self.sim.joint_damping,
            self.sim.limit_stiffness, self.sim.limit_damping,
            self.sim.root_rate_cap, self.sim.hinge_rate_cap)
        self.step_count += 1

        unstable = (status != 0
                    or not np.all(np.isfinite(self.q))
                    or not np.all(np.isfinite(self.qd))
                    or np.any(np.abs(self.qd) > self.sim.instability_cap)
                    or np.any(np.abs(self.q[:2]) > self.sim.instability_cap))
        if unstable:
            self.terminated = True
            obs = np.zeros((self.body.n, observation_width(self.env_kind)))
            return StepResult(obs, 0.0, True, {"instability": True,
                                               "progress": 0.0, "alive": 0.0})

        progress = abs(self.q[0] - x_before) / self.sim.control_dt
        alive = self.sim.alive_bonus
        reward = progress + alive
        fell = self.q[1] < self.sim.terminate_root_z
        timeout = self.step_count >= self.sim.episode_horizon
        done = bool(fell or timeout)
        self.terminated = done
        info = {"progress": progress, "alive": alive, "fell": bool(fell),
                "timeout": bool(timeout), "instability": False}
        return StepResult(self.observe(), float(reward), done, info)

    # -- observations --------------------------------------------------------------

    def observe(self):
        """Per-joint observation matrix, canonical node order, zero padded."""
        width = observation_width(self.env_kind)
        b = self.body
        obs = np.zeros((b.n, width))
        for i in range(b.n):
            if b.dof[i] < 0:
                obs[i, 0] = self.q[2]
                obs[i, 1] = self.qd[2]
                obs[i, 2] = self.q[1]
                obs[i, 3] = self.qd[0]
                obs[i, 4] = self.qd[1]
                if self.env_kind == GAP_CROSSER:
                    obs[i, 5] = (self.q[0] % self.tcfg.gap_period) / self.tcfg.gap_period
            else:
                obs[i, 0] = self.q[b.dof[i]]
                obs[i, 1] = self.qd[b.dof[i]]
        return obs
