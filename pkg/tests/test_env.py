import io

import numpy as np
import pytest

from loracompass.baselines import OraclePolicy
from loracompass.env import (
    EnvConfig,
    feasible_ring,
    reset,
    rollout_episodes,
    step,
    teacher_replay,
    write_episode_log,
)
from loracompass.errors import EpisodeTerminated, ValidationError
from loracompass.grid import ACTIONS, RngStream, reward
from loracompass.policy import EpisodePolicy
from loracompass.sites import SiteGenParams, expected_rssi, generate_site, ingest_samples


def make_site(extent=8, tag=(0, 0), seed=0, **kw):
    params = dict(
        shadowing_sigma_db=0.0,
        sample_noise_sigma_db=0.0,
        loss_prob_at_far_edge=0.0,
        samples_per_cell=1,
        extent=extent,
        seed=seed,
    )
    params.update(kw)
    return generate_site(SiteGenParams(**params), tag=tag)


class ConstantPolicy(EpisodePolicy):
    def __init__(self, action):
        self.action = action

    def decide_one(self, state, ctx, rng):
        return self.action


class RandomPolicy(EpisodePolicy):
    def decide_one(self, state, ctx, rng):
        return ACTIONS[int(rng.integers(5))]


class TestReset:
    def test_exact_radius_ring(self):
        site = make_site()
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=200)
        ring = feasible_ring(site, cfg)
        assert set(ring) == {(2, 0), (-2, 0), (0, 2), (0, -2)}
        for k in range(20):
            st = reset(site, cfg, RngStream(0).child(k))
            assert st.u in ring

    def test_range_bounds_hold(self):
        site = make_site(extent=25)
        cfg = EnvConfig()  # default 200..2500 m
        for k in range(300):
            st = reset(site, cfg, RngStream(1).child(k))
            d = np.hypot(st.u[0], st.u[1])
            assert 2.0 <= d <= 25.0

    def test_empty_ring_is_error(self):
        site = make_site(extent=3)
        cfg = EnvConfig(initial_distance_min_m=1000, initial_distance_max_m=2000)
        with pytest.raises(ValidationError):
            reset(site, cfg, RngStream(0))

    def test_fixed_seed_reproduces_start(self):
        site = make_site()
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=800)
        a = reset(site, cfg, RngStream(5).child(3))
        b = reset(site, cfg, RngStream(5).child(3))
        assert a.u == b.u and a.v == b.v


class TestStep:
    def test_full_compliance_executes_command(self):
        site = make_site()
        cfg = EnvConfig(tau=1.0, initial_distance_min_m=200, initial_distance_max_m=500)
        st = reset(site, cfg, RngStream(2).child(0))
        for a in ("N", "E", "S", "W", "O", "N"):
            _, _, executed = step(st, site, a, cfg)
            assert executed == a

    def test_zero_compliance_is_uniform(self):
        site = make_site(extent=4)
        cfg = EnvConfig(
            tau=0.0, max_steps=50_000,
            initial_distance_min_m=100, initial_distance_max_m=300,
        )
        st = reset(site, cfg, RngStream(3).child(0))
        counts = {a: 0 for a in ACTIONS}
        for _ in range(50_000):
            _, _, executed = step(st, site, "O", cfg)
            counts[executed] += 1
        for a in ACTIONS:
            assert 0.19 <= counts[a] / 50_000 <= 0.21, counts

    def test_reward_matches_true_states(self):
        site = make_site(tag=(2, -1))
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=600, max_steps=60)
        st = reset(site, cfg, RngStream(4).child(0))
        gen = RngStream(9).generator()
        while not st.terminated:
            a = ACTIONS[int(gen.integers(5))]
            before = st.u
            _, r, executed = step(st, site, a, cfg)
            s_prev = (before[0] - 2, before[1] + 1)
            s_next = (st.u[0] - 2, st.u[1] + 1)
            assert r == reward(s_prev, s_next)

    def test_convergence_by_dwell_at_tag(self):
        site = make_site(tag=(0, 0))
        cfg = EnvConfig(convergence_q=4, initial_distance_min_m=0, initial_distance_max_m=0)
        st = reset(site, cfg, RngStream(0).child(1))
        assert st.u == (0, 0)
        for _ in range(4):
            step(st, site, "O", cfg)
        assert st.terminated
        assert st.converged_at == 1
        with pytest.raises(EpisodeTerminated):
            step(st, site, "O", cfg)

    def test_no_early_termination_before_q_consecutive(self):
        site = make_site(tag=(0, 0))
        cfg = EnvConfig(convergence_q=3, initial_distance_min_m=0, initial_distance_max_m=0)
        st = reset(site, cfg, RngStream(0).child(2))
        step(st, site, "O", cfg)
        step(st, site, "O", cfg)
        step(st, site, "E", cfg)  # leaves proximity, run resets
        assert not st.terminated
        step(st, site, "W", cfg)
        step(st, site, "O", cfg)
        assert not st.terminated
        step(st, site, "O", cfg)
        assert st.terminated and st.converged_at == 4

    def test_step_budget_terminates(self):
        site = make_site()
        cfg = EnvConfig(max_steps=5, initial_distance_min_m=300, initial_distance_max_m=600)
        st = reset(site, cfg, RngStream(8).child(0))
        for _ in range(5):
            step(st, site, "N", cfg)
        assert st.terminated and st.converged_at is None
        with pytest.raises(EpisodeTerminated):
            step(st, site, "N", cfg)


class TestOptimalPolicyInvariant:
    def test_steps_equal_l1_plus_dwell(self):
        site = make_site(tag=(3, -2), extent=10)
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=900)
        eps = rollout_episodes(site, cfg, OraclePolicy(site.tag), 40, RngStream(7))
        for e in eps:
            s0 = (e.positions[0][0] - 3, e.positions[0][1] + 2)
            l1 = abs(s0[0]) + abs(s0[1])
            assert e.converged_at == l1
            assert e.k == l1 + cfg.convergence_q - 1


class TestTeacherReplay:
    def test_noiseless_site_matches_student(self):
        site = make_site()
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=500, max_steps=30)
        st = reset(site, cfg, RngStream(11).child(0))
        gen = RngStream(12).generator()
        while not st.terminated:
            step(st, site, ACTIONS[int(gen.integers(5))], cfg)
        tw = teacher_replay(st, site)
        assert tw.positions == st.positions
        for u in set(st.positions):
            assert tw.vbar(u) == pytest.approx(st.vbar(u))

    def test_observations_become_expectations(self):
        site = ingest_samples([(0, 0, -80), (0, 0, -90), (1, 0, -70)], tag=(0, 0), extent=2)
        cfg = EnvConfig(initial_distance_min_m=0, initial_distance_max_m=0, max_steps=10)
        st = reset(site, cfg, RngStream(13).child(0))
        step(st, site, "O", cfg)
        step(st, site, "E", cfg)
        tw = teacher_replay(st, site)
        assert tw.vbar((0, 0)) == -85.0
        assert tw.vbar((1, 0)) == -70.0
        for u in set(st.positions):
            assert tw.visit_count(u) == st.visit_count(u)


def test_episode_log_format():
    site = make_site()
    cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=500, max_steps=3)
    st = reset(site, cfg, RngStream(14).child(0))
    for a in ("N", "E", "O"):
        step(st, site, a, cfg)
    buf = io.StringIO()
    write_episode_log(st, site, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0].strip() == "k,i,j,rssi,action,reward,executed"
    assert len(lines) == 1 + 4  # header + 4 positions
    assert lines[-1].strip().endswith(",,,")  # final row has no action yet


def test_rollouts_identical_across_threads():
    site = make_site(extent=10, sample_noise_sigma_db=4.0, samples_per_cell=8)
    cfg = EnvConfig(max_steps=40, tau=0.8, initial_distance_min_m=200, initial_distance_max_m=700)
    a = rollout_episodes(site, cfg, RandomPolicy(), 60, RngStream(5), threads=1)
    b = rollout_episodes(site, cfg, RandomPolicy(), 60, RngStream(5), threads=3)
    for x, y in zip(a, b):
        assert x.positions == y.positions
        assert x.observations == y.observations
        assert x.rewards == y.rewards
