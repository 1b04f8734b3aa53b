"""Compare every searcher on one unseen noisy site.

Requires policy.ckpt and train_site.json from 03_train_policy.py.  The eval
site is generated with a different seed and a shifted path-loss exponent, the
domain-shift situation the learned policy is supposed to survive.
"""

from loracompass import nnet
from loracompass.baselines import (
    RangingSearcher,
    SimplexSearcher,
    SpiralSearcher,
    fit_ranging_model,
    robbins_monro_searcher,
)
from loracompass.env import EnvConfig
from loracompass.evaluate import efficiency, median_steps, run_episodes, success_rate
from loracompass.grid import RngStream
from loracompass.policy import CompassPolicy, ExploreParams
from loracompass.sites import SiteGenParams, generate_site, load_site

train_site = load_site("train_site.json")
eval_site = generate_site(
    SiteGenParams(extent=8, sample_noise_sigma_db=6.0, shadowing_sigma_db=3.0,
                  path_loss_exponent=3.1, loss_prob_at_far_edge=0.1, seed=31),
    tag=(0, 0),
)
params = nnet.load_checkpoint("policy.ckpt")
explore = ExploreParams(params.extra["reference_rssi"], beta=8.0, alpha=0.5)
cfg = EnvConfig(max_steps=300, initial_distance_min_m=200, initial_distance_max_m=700)

searchers = {
    "loracompass": CompassPolicy(params, explore, mode="ucb"),
    "greedy": CompassPolicy(params, explore, mode="greedy"),
    "eps_greedy": CompassPolicy(params, explore, mode="eps_greedy", eps=0.1),
    "sampling": CompassPolicy(params, explore, mode="sampling"),
    "spiral": SpiralSearcher(stop_rssi=train_site.tag_reference_rssi),
    "ranging": RangingSearcher(fit_ranging_model(train_site), eval_site),
    "simplex": SimplexSearcher(),
    "rm": robbins_monro_searcher(4.0),
}

print("%-12s %8s %10s %12s" % ("searcher", "success", "efficiency", "median steps"))
for name, policy in searchers.items():
    records = run_episodes(eval_site, cfg, policy, 150, RngStream(7))
    print(
        "%-12s %8.3f %10.3f %12.1f"
        % (
            name,
            success_rate(records, cfg.proximity_d_m, eval_site.grid_size_m),
            efficiency(records, cfg.convergence_q, cfg.proximity_d_m, eval_site.grid_size_m),
            median_steps(records, cfg.convergence_q, cfg.proximity_d_m, eval_site.grid_size_m),
        )
    )
