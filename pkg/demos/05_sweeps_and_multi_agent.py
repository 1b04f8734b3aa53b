"""Run the evaluation-time parameter sweeps and the multi-agent case study.

Requires policy.ckpt + train_site.json from 03_train_policy.py.  Writes one
CSV per sweep; training-time sweeps (map_size, omega1) are available through
the CLI (`loracompass sweep map_size ...`) since they retrain per value.
"""

from loracompass import nnet
from loracompass.env import EnvConfig
from loracompass.evaluate import (
    joint_efficiency,
    joint_success_rate,
    multi_agent_eval,
    run_sweep,
    summarize_sweep,
    write_sweep_csv,
)
from loracompass.grid import RngStream
from loracompass.policy import CompassPolicy, ExploreParams
from loracompass.sites import load_site

site = load_site("train_site.json")
params = nnet.load_checkpoint("policy.ckpt")
ref = params.extra["reference_rssi"]
cfg = EnvConfig(max_steps=200, initial_distance_min_m=200, initial_distance_max_m=700)


def compass(beta=8.0, alpha=0.5, mode="ucb"):
    return CompassPolicy(params, ExploreParams(ref, beta=beta, alpha=alpha), mode=mode)


sweeps = {
    "tau": ([0.5, 0.6, 0.7, 0.8, 0.9, 1.0], lambda v: {
        "site": site, "policy": compass(),
        "cfg": EnvConfig(max_steps=200, tau=v,
                         initial_distance_min_m=200, initial_distance_max_m=700)}),
    "proximity": ([100.0, 200.0, 300.0, 500.0], lambda v: {
        "site": site, "policy": compass(), "metric_d_m": v}),
    "beta": ([0.0, 2.0, 4.0, 8.0, 13.0], lambda v: {
        "site": site, "policy": compass(beta=v)}),
    "alpha": ([0.1, 0.25, 0.5, 1.0, 2.0], lambda v: {
        "site": site, "policy": compass(alpha=v)}),
    "explore": (["ucb", "greedy", "eps_greedy", "sampling"], lambda v: {
        "site": site, "policy": compass(mode=v)}),
}

for name, (values, factory) in sweeps.items():
    rows = run_sweep(name, values, factory, cfg, RngStream(11), episodes=60, reps=3)
    write_sweep_csv(rows, "sweep_%s.csv" % name)
    print("== %s ==" % name)
    for entry in summarize_sweep(rows):
        print(
            "  %-10s success %.3f +/- %.3f  efficiency %.3f"
            % (entry["value"], entry["success_rate_mean"], entry["success_rate_std"],
               entry["efficiency_mean"])
        )

print("== multi-agent ==")
for n_agents in (1, 2, 3):
    groups = multi_agent_eval(n_agents, site, compass(), cfg, RngStream(13), n_groups=60)
    print(
        "  %d agents: joint success %.3f  joint efficiency %.3f"
        % (
            n_agents,
            joint_success_rate(groups, cfg.proximity_d_m, site.grid_size_m),
            joint_efficiency(groups, cfg.convergence_q, cfg.proximity_d_m, site.grid_size_m),
        )
    )
