import numpy as np
import pytest

from loracompass.baselines import OraclePolicy, SpiralSearcher
from loracompass.env import EnvConfig
from loracompass.errors import ValidationError
from loracompass.evaluate import (
    EvalRecord,
    efficiency,
    joint_efficiency,
    joint_k_stars,
    joint_success_rate,
    k_star,
    load_records,
    median_steps,
    multi_agent_eval,
    run_episodes,
    run_sweep,
    save_records,
    success_rate,
    summarize_sweep,
    write_sweep_csv,
)
from loracompass.grid import ACTIONS, RngStream, optimal_action_vector
from loracompass.policy import EpisodePolicy
from loracompass.sites import SiteGenParams, generate_site


def rec(s0, states, converged_at=None):
    return EvalRecord(
        episode=0,
        s0=s0,
        steps=len(states) - 1,
        converged_at=converged_at,
        final_s=states[-1],
        states=states,
    )


def dwell_record(s0, q=4):
    """Straight L1 walk to the tag, then q dwell steps."""
    states = [s0]
    i, j = s0
    while i != 0:
        i -= int(np.sign(i))
        states.append((i, j))
    while j != 0:
        j -= int(np.sign(j))
        states.append((i, j))
    states.extend([(0, 0)] * (q - 1))
    return rec(s0, states)


class TestSuccessRate:
    def test_half(self):
        records = [rec((5, 5), [(5, 5), (0, 0)]), rec((5, 5), [(5, 5), (5, 5)])]
        assert success_rate(records, 100.0, 100.0) == 0.5

    def test_all_at_tag(self):
        records = [rec((1, 1), [(1, 1), (0, 0)])] * 4
        assert success_rate(records, 100.0, 100.0) == 1.0

    def test_strict_inequality_with_wide_threshold(self):
        r = rec((5, 5), [(5, 5), (3, 3)])
        # |(3,3)| * 100 = 424.26 m < 500 counted
        assert success_rate([r], 500.0, 100.0) == 1.0
        assert success_rate([r], 424.0, 100.0) == 0.0

    def test_empty_records_rejected(self):
        with pytest.raises(ValidationError):
            success_rate([], 100.0, 100.0)


class TestEfficiency:
    def test_worked_ratio(self):
        # |s0|_1 = 7, k* = 14 -> contribution 7/14 = 0.5
        states = [(3, 4)] + [(3, 4)] * 13 + [(0, 0)] * 4
        r = rec((3, 4), states)
        assert k_star(r, 100.0, 4, 100.0) == 14
        assert efficiency([r], 4, 100.0, 100.0) == pytest.approx(0.5)

    def test_perfect_path_scores_one(self):
        r = dwell_record((3, 4))
        assert k_star(r, 100.0, 4, 100.0) == 7
        assert efficiency([r], 4, 100.0, 100.0) == 1.0

    def test_no_successes_returns_zero(self):
        r = rec((5, 5), [(5, 5), (5, 4)])
        assert efficiency([r], 4, 100.0, 100.0) == 0.0

    def test_start_cell_does_not_count_toward_dwell(self):
        states = [(0, 0), (0, 0), (0, 0), (0, 0), (0, 0)]
        r = rec((0, 0), states)
        assert k_star(r, 100.0, 4, 100.0) == 1


class TestKStarInvariant:
    def test_no_policy_beats_l1(self):
        site = generate_site(
            SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=0,
                          loss_prob_at_far_edge=0, samples_per_cell=1, extent=8),
            tag=(2, 2),
        )
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=700)
        records = run_episodes(site, cfg, OraclePolicy((2, 2)), 30, RngStream(1))
        for r in records:
            ks = k_star(r, cfg.proximity_d_m, cfg.convergence_q, site.grid_size_m)
            assert ks is not None
            assert ks >= abs(r.s0[0]) + abs(r.s0[1])
            assert ks == r.converged_at


class TestPersistence:
    def test_roundtrip_reproduces_metrics_exactly(self, tmp_path):
        site = generate_site(
            SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=4.0,
                          loss_prob_at_far_edge=0, samples_per_cell=10, extent=8),
            tag=(0, 0),
        )
        cfg = EnvConfig(max_steps=60, initial_distance_min_m=200, initial_distance_max_m=700)
        records = run_episodes(site, cfg, OraclePolicy((0, 0)), 20, RngStream(2))
        save_records(records, tmp_path / "run")
        back = load_records(tmp_path / "run")
        assert success_rate(back, 100.0, 100.0) == success_rate(records, 100.0, 100.0)
        assert efficiency(back, 4, 100.0, 100.0) == efficiency(records, 4, 100.0, 100.0)
        for a, b in zip(records, back):
            assert a.states == b.states and a.converged_at == b.converged_at


class OptimalSampler(EpisodePolicy):
    """Draws from the optimal action distribution (stochastic but convergent)."""

    def __init__(self, tag):
        self.tag = tag

    def decide_one(self, state, ctx, rng):
        s = (state.u[0] - self.tag[0], state.u[1] - self.tag[1])
        return ACTIONS[int(rng.choice(5, p=optimal_action_vector(s)))]


class TestSweep:
    def make_site(self):
        return generate_site(
            SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=0,
                          loss_prob_at_far_edge=0, samples_per_cell=1, extent=8),
            tag=(0, 0),
        )

    def test_tau_one_point_equals_default_run(self):
        site = self.make_site()
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=600)
        pol = OraclePolicy((0, 0))

        def factory(value):
            c = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=600, tau=value)
            return {"site": site, "policy": pol, "cfg": c}

        stream = RngStream(7)
        rows = run_sweep("tau", [1.0], factory, cfg, stream, episodes=20, reps=2)
        base = run_episodes(site, cfg, pol, 20, stream.child("sweep"), offset=0)
        assert rows[0]["success_rate"] == success_rate(base, 100.0, 100.0)
        assert rows[0]["median_steps"] == median_steps(base, 4, 100.0, 100.0)

    def test_proximity_sweep_monotone_for_fixed_records(self):
        site = self.make_site()
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=600)
        pol = OptimalSampler((0, 0))

        def factory(value):
            return {"site": site, "policy": pol, "metric_d_m": value}

        rows = run_sweep(
            "proximity", [100.0, 200.0, 400.0, 800.0], factory, cfg, RngStream(8),
            episodes=25, reps=1,
        )
        rates = [r["success_rate"] for r in rows]
        assert rates == sorted(rates)

    def test_spiral_quadratic_distance_signature(self):
        site = generate_site(
            SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=0,
                          loss_prob_at_far_edge=0, samples_per_cell=1, extent=12),
            tag=(0, 0),
        )
        pol = SpiralSearcher(stop_rssi=site.tag_reference_rssi)
        cfg = EnvConfig(initial_distance_min_m=200, initial_distance_max_m=600)

        def factory(value):
            c = EnvConfig(
                initial_distance_min_m=value, initial_distance_max_m=value, max_steps=500
            )
            return {"site": site, "policy": pol, "cfg": c}

        rows = run_sweep("distance", [400.0, 800.0], factory, cfg, RngStream(9),
                         episodes=30, reps=1)
        med = {r["value"]: r["median_steps"] for r in rows}
        ratio = med[800.0] / med[400.0]
        assert 3.0 <= ratio <= 5.0, med

    def test_csv_and_summary(self, tmp_path):
        rows = [
            {"sweep_param": "tau", "value": 1.0, "rep": 0, "success_rate": 0.8,
             "efficiency": 0.5, "median_steps": 10.0},
            {"sweep_param": "tau", "value": 1.0, "rep": 1, "success_rate": 0.6,
             "efficiency": 0.3, "median_steps": 12.0},
        ]
        path = tmp_path / "s.csv"
        write_sweep_csv(rows, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "sweep_param,value,rep,success_rate,efficiency,median_steps"
        assert len(lines) == 3
        summary = summarize_sweep(rows)
        assert summary[0]["success_rate_mean"] == pytest.approx(0.7)


class BernoulliPolicy(EpisodePolicy):
    """Succeeds with probability p per episode: walks optimally or away."""

    def __init__(self, tag, p):
        self.tag = tag
        self.p = p

    def make_controller(self):
        return {}

    def decide_one(self, state, ctx, rng):
        if "good" not in ctx:
            ctx["good"] = rng.random() < self.p
        if ctx["good"]:
            s = (state.u[0] - self.tag[0], state.u[1] - self.tag[1])
            return ACTIONS[int(np.argmax(optimal_action_vector(s)))]
        return "N"


class TestMultiAgent:
    def make_site(self):
        return generate_site(
            SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=0,
                          loss_prob_at_far_edge=0, samples_per_cell=1, extent=8),
            tag=(0, 0),
        )

    def test_single_agent_matches_plain_metrics(self):
        site = self.make_site()
        cfg = EnvConfig(max_steps=40, initial_distance_min_m=200, initial_distance_max_m=600)
        groups = multi_agent_eval(1, site, OraclePolicy((0, 0)), cfg, RngStream(1), n_groups=10)
        flat = [g[0] for g in groups]
        assert joint_success_rate(groups, 100.0, 100.0) == success_rate(flat, 100.0, 100.0)
        ks = joint_k_stars(groups, 4, 100.0, 100.0)
        assert all(k == flat[i].converged_at for i, k in enumerate(ks))

    def test_group_members_share_start(self):
        site = self.make_site()
        cfg = EnvConfig(max_steps=30, initial_distance_min_m=200, initial_distance_max_m=600)
        groups = multi_agent_eval(3, site, OraclePolicy((0, 0)), cfg, RngStream(2), n_groups=5)
        for g in groups:
            assert len({r.s0 for r in g}) == 1

    def test_joint_rate_dominates_single(self):
        site = self.make_site()
        cfg = EnvConfig(max_steps=25, initial_distance_min_m=200, initial_distance_max_m=700)
        pol = BernoulliPolicy((0, 0), 0.6)
        groups = multi_agent_eval(3, site, pol, cfg, RngStream(3), n_groups=60)
        singles = [r for g in groups for r in g]
        assert joint_success_rate(groups, 100.0, 100.0) >= success_rate(singles, 100.0, 100.0)

    def test_independence_arithmetic(self):
        # per-agent success 0.7 -> joint for 3 agents approx 1 - 0.3^3 = 0.973
        site = self.make_site()
        cfg = EnvConfig(max_steps=40, initial_distance_min_m=200, initial_distance_max_m=500)
        pol = BernoulliPolicy((0, 0), 0.7)
        groups = multi_agent_eval(3, site, pol, cfg, RngStream(4), n_groups=400)
        joint = joint_success_rate(groups, 100.0, 100.0)
        expected = 1 - (1 - 0.7) ** 3
        ci = 2.58 * np.sqrt(expected * (1 - expected) / 400)
        assert abs(joint - expected) <= ci + 0.01

    def test_rejects_zero_agents(self):
        with pytest.raises(ValidationError):
            multi_agent_eval(0, self.make_site(), OraclePolicy((0, 0)), EnvConfig(), RngStream(0))

    def test_joint_efficiency_uses_min_k_star(self):
        g = [
            dwell_record((3, 4)),
            rec((3, 4), [(3, 4)] + [(3, 4)] * 20),
        ]
        assert joint_efficiency([g], 4, 100.0, 100.0) == 1.0
