"""Simulator contracts: determinism, rewards, terminations, observations."""

import numpy as np
import pytest

from coevo import morphology as M
from coevo.config import (GAP_CROSSER, ROUGH_TERRAIN, ExperimentConfig,
                          sim_defaults_for)
from coevo.sim2d import EnvParams, World, generate_terrain, observation_width
from coevo.sim2d.world import SimulationError


CFG = ExperimentConfig.default()
FLAT = generate_terrain(EnvParams(ROUGH_TERRAIN, 0.0, 2.4), 0, CFG.terrain)


def make_world(morph, field=FLAT, env_kind=ROUGH_TERRAIN):
    sim = sim_defaults_for(env_kind)
    return World(morph, field, env_kind, sim, CFG.morph, CFG.terrain)


class TestReset:
    def test_head_only_on_flat(self):
        w = make_world(M.initial_morphology(0))
        s = w.reset()
        assert s.root_x == 0.0
        assert s.root_z == CFG.sim.clearance
        assert np.all(s.qd == 0.0)
        assert np.all(s.link_vel == 0.0)

    def test_reset_is_bitwise_deterministic(self):
        m = M.initial_morphology(2)
        a = make_world(m).reset()
        b = make_world(m).reset()
        assert np.array_equal(a.q, b.q) and np.array_equal(a.qd, b.qd)
        assert np.array_equal(a.link_pos, b.link_pos)

    def test_placement_above_rough_terrain(self):
        field = generate_terrain(EnvParams(ROUGH_TERRAIN, 2.0, 5.0), 7, CFG.terrain)
        m = M.initial_morphology(3)
        w = World(m, field, ROUGH_TERRAIN, CFG.sim, CFG.morph, CFG.terrain)
        s = w.reset()
        assert s.root_z == pytest.approx(float(field.height_at(0.0)) + CFG.sim.clearance)


class TestDeterminism:
    def test_identical_trajectories(self):
        field = generate_terrain(EnvParams(ROUGH_TERRAIN, 1.5, 4.0), 3, CFG.terrain)
        m = M.initial_morphology(2)
        rng = np.random.default_rng(0)
        actions = rng.uniform(-1, 1, (200, 3))
        qs = []
        for _ in range(2):
            w = World(m, field, ROUGH_TERRAIN, CFG.sim, CFG.morph, CFG.terrain)
            w.reset()
            traj = []
            for a in actions:
                r = w.step(a)
                traj.append((w.q.copy(), w.qd.copy(), r.reward))
                if r.done:
                    break
            qs.append(traj)
        assert len(qs[0]) == len(qs[1])
        for (qa, qda, ra), (qb, qdb, rb) in zip(*qs):
            assert np.array_equal(qa, qb) and np.array_equal(qda, qdb)
            assert ra == rb


class TestRewards:
    def test_stationary_agent_gets_alive_bonus_only(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        for _ in range(50):
            r = w.step(np.zeros(3))      # settle
        assert r.reward == pytest.approx(1.0, abs=1e-9)

    def test_reward_decomposition_bit_exact(self):
        field = generate_terrain(EnvParams(ROUGH_TERRAIN, 1.0, 3.0), 1, CFG.terrain)
        m = M.initial_morphology(2)
        w = World(m, field, ROUGH_TERRAIN, CFG.sim, CFG.morph, CFG.terrain)
        w.reset()
        rng = np.random.default_rng(5)
        for _ in range(300):
            x_before = w.q[0]
            r = w.step(rng.uniform(-1, 1, 3))
            if r.info["instability"]:
                break
            progress = abs(w.q[0] - x_before) / CFG.sim.control_dt
            assert r.info["progress"] == progress
            assert r.reward == progress + 1.0          # exact float reproduction
            assert r.info["alive"] == 1.0
            if r.done:
                break

    def test_gap_crosser_constants(self):
        field = generate_terrain(EnvParams(GAP_CROSSER, gap_width=1.0), 1, CFG.terrain)
        m = M.initial_morphology(2)
        sim = sim_defaults_for(GAP_CROSSER)
        assert sim.control_dt == 0.08 and sim.alive_bonus == 0.1
        w = World(m, field, GAP_CROSSER, sim, CFG.morph, CFG.terrain)
        w.reset()
        x_before = w.q[0]
        r = w.step(np.array([0.3, -0.2, 0.1]))
        progress = abs(w.q[0] - x_before) / 0.08
        assert r.reward == progress + 0.1


class TestTermination:
    def test_falls_below_threshold(self):
        # a head-only body free-falls through the 1.4 line
        w = make_world(M.initial_morphology(0))
        w.reset()
        prev_z = w.q[1]
        for _ in range(CFG.sim.episode_horizon):
            r = w.step(np.zeros(1))
            if r.done:
                break
            prev_z = w.q[1]
        assert r.done and r.info["fell"]
        assert w.q[1] < 1.4 <= prev_z

    def test_gap_crosser_threshold_is_1_5(self):
        field = generate_terrain(EnvParams(GAP_CROSSER, gap_width=1.0), 1, CFG.terrain)
        sim = sim_defaults_for(GAP_CROSSER)
        w = World(M.initial_morphology(0), field, GAP_CROSSER, sim, CFG.morph, CFG.terrain)
        w.reset()
        prev_z = w.q[1]
        for _ in range(sim.episode_horizon):
            r = w.step(np.zeros(1))
            if r.done:
                break
            prev_z = w.q[1]
        assert r.done and r.info["fell"]
        assert w.q[1] < 1.5 <= prev_z

    def test_horizon_timeout(self):
        sim = sim_defaults_for(ROUGH_TERRAIN)
        sim.episode_horizon = 25
        w = World(M.initial_morphology(2), FLAT, ROUGH_TERRAIN, sim, CFG.morph, CFG.terrain)
        w.reset()
        for i in range(25):
            r = w.step(np.zeros(3))
        assert r.done and r.info["timeout"]

    def test_step_after_done_raises(self):
        sim = sim_defaults_for(ROUGH_TERRAIN)
        sim.episode_horizon = 2
        w = World(M.initial_morphology(2), FLAT, ROUGH_TERRAIN, sim, CFG.morph, CFG.terrain)
        w.reset()
        w.step(np.zeros(3))
        w.step(np.zeros(3))
        with pytest.raises(SimulationError):
            w.step(np.zeros(3))

    def test_instability_flagged_not_raised(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        w.qd[0] = 5e3          # beyond the configured cap
        r = w.step(np.zeros(3))
        assert r.done and r.info["instability"]
        assert np.all(np.isfinite(r.observation)) and r.reward == 0.0


class TestInputErrors:
    def test_wrong_torque_length(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        with pytest.raises(SimulationError):
            w.step(np.zeros(5))

    def test_non_finite_torque(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        with pytest.raises(SimulationError):
            w.step(np.array([0.0, np.nan, 0.0]))


class TestInvariants:
    def test_zero_torque_flat_ground_no_slip(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        for _ in range(100):
            w.step(np.zeros(3))
        assert abs(w.q[0]) < CFG.sim.slip_tolerance

    def test_no_nan_escapes_under_abuse(self):
        rng = np.random.default_rng(9)
        field = generate_terrain(EnvParams(ROUGH_TERRAIN, 2.4, 7.2), 13, CFG.terrain)
        for trial in range(5):
            m = M.initial_morphology(3)
            w = World(m, field, ROUGH_TERRAIN, CFG.sim, CFG.morph, CFG.terrain)
            w.reset()
            for _ in range(400):
                r = w.step(rng.uniform(-1, 1, len(m)))
                assert np.isfinite(r.reward)
                assert np.all(np.isfinite(r.observation))
                if r.done:
                    break


class TestObservations:
    def test_zero_velocity_rows_at_reset(self):
        w = make_world(M.initial_morphology(2))
        w.reset()
        obs = w.observe()
        assert obs.shape == (3, observation_width(ROUGH_TERRAIN))
        assert np.all(obs[:, 1] == 0.0)      # angular velocities
        assert np.all(obs[1:, 3:] == 0.0)    # zero padding on non-root rows
        assert obs[0, 2] == w.q[1]

    def test_rows_have_identical_length(self):
        for kind in (ROUGH_TERRAIN, GAP_CROSSER):
            field = FLAT if kind == ROUGH_TERRAIN else generate_terrain(
                EnvParams(GAP_CROSSER, gap_width=1.0), 1, CFG.terrain)
            w = make_world(M.initial_morphology(3), field, kind)
            w.reset()
            obs = w.observe()
            assert obs.shape == (4, observation_width(kind))

    def test_gap_phase_matches_modular_oracle(self):
        field = generate_terrain(EnvParams(GAP_CROSSER, gap_width=1.0), 1, CFG.terrain)
        w = make_world(M.initial_morphology(1), field, GAP_CROSSER)
        w.reset()
        period = CFG.terrain.gap_period
        for x in (0.0, 0.25, period / 2, period - 1e-9, period, 2.5 * period, -1.3):
            w.q[0] = x
            phase = w.observe()[0, 5]
            assert phase == pytest.approx((x % period) / period, abs=1e-12)
        w.q[0] = period
        assert w.observe()[0, 5] == pytest.approx(0.0, abs=1e-12)
