import time
import numpy as np
from loracompass.grid import RngStream
from loracompass.sites import SiteGenParams, generate_site
from loracompass.env import EnvConfig
from loracompass.policy import CompassPolicy, ExploreParams, LossWeights, train
from loracompass.evaluate import run_episodes, success_rate

t0 = time.time()
site = generate_site(SiteGenParams(
    shadowing_sigma_db=0.0, sample_noise_sigma_db=8.0,
    loss_prob_at_far_edge=0.0, samples_per_cell=40, extent=7, seed=100), tag=(0, 0))
cfg_tr = EnvConfig(max_steps=60, initial_distance_min_m=200, initial_distance_max_m=600)
cfg_ev = EnvConfig(max_steps=150, initial_distance_min_m=200, initial_distance_max_m=600)
ep = ExploreParams(site.tag_reference_rssi)

for lr in (2.5e-3, 5e-3):
    p = None
    print("== lr %g ==" % lr, flush=True)
    for r in range(8):
        p, rows = train(site, cfg_tr, LossWeights(), ep, epochs=10, batch_episodes=20,
                        stream=RngStream(1), params=p, m=3, channels=(6,10,14), hidden=24, lr=lr)
        pol = CompassPolicy(p, ep, mode="ucb")
        recs = run_episodes(site, cfg_ev, pol, 60, RngStream(777))
        sr = success_rate(recs, 100.0, 100.0)
        rr = rows[-1]
        print("  ep %3d train %.2f | ucb %.2f (%.0fs)" % (rr["epoch"], rr["success_rate"], sr, time.time()-t0), flush=True)
        if sr > 0.9: break
