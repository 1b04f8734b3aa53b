import time, json
import numpy as np
from loracompass.grid import RngStream
from loracompass.sites import SiteGenParams, generate_site
from loracompass.env import EnvConfig
from loracompass.policy import CompassPolicy, ExploreParams, LossWeights, train
from loracompass.evaluate import run_episodes, success_rate, efficiency
from loracompass import nnet

site = generate_site(SiteGenParams(shadowing_sigma_db=0, sample_noise_sigma_db=0,
                     loss_prob_at_far_edge=0, samples_per_cell=1, extent=25, seed=11), tag=(0,0))
ep = ExploreParams(site.tag_reference_rssi, beta=8.0, alpha=0.5)
cfg_tr = EnvConfig(max_steps=200, initial_distance_min_m=200, initial_distance_max_m=2500)
cfg_ev = EnvConfig(max_steps=500, initial_distance_min_m=200, initial_distance_max_m=1500)

p = None
t0 = time.time()
best = 0.0
for r in range(40):
    p, rows = train(site, cfg_tr, LossWeights(), ep, epochs=5, batch_episodes=50,
                    stream=RngStream(0), params=p, m=10, lr=1e-3, threads=2)
    pol = CompassPolicy(p, ep, mode="ucb")
    recs = run_episodes(site, cfg_ev, pol, 60, RngStream(33), threads=2)
    sr = success_rate(recs, 100.0, site.grid_size_m)
    eff = efficiency(recs, 4, 100.0, site.grid_size_m)
    rr = rows[-1]
    print("ep %3d  train-succ %.2f steps %5.1f  pg %+7.3f sl %.3f | ucb succ %.3f eff %.2f  (%.0fs)"
          % (rr["epoch"], rr["success_rate"], rr["mean_steps"], rr["loss_pg"], rr["loss_sl"], sr, eff, time.time()-t0), flush=True)
    if sr > best:
        best = sr
        nnet.save_checkpoint(p, "/root/pkg/.cal/best_fullscale.ckpt")
    if sr >= 0.97 and rr["epoch"] >= 20:
        break
print("BEST", best)
