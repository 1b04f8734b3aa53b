"""Calibrate scales for the distillation-effect and SL-acceleration checks."""
import time
import numpy as np
from loracompass.grid import RngStream
from loracompass.sites import SiteGenParams, generate_site
from loracompass.env import EnvConfig
from loracompass.policy import CompassPolicy, ExploreParams, LossWeights, train
from loracompass.evaluate import run_episodes, success_rate, efficiency

t00 = time.time()

def noisy_site(seed):
    return generate_site(SiteGenParams(
        shadowing_sigma_db=0.0, sample_noise_sigma_db=8.0,
        loss_prob_at_far_edge=0.0, samples_per_cell=40, extent=7, seed=seed), tag=(0, 0))

cfg_tr = EnvConfig(max_steps=60, initial_distance_min_m=200, initial_distance_max_m=600)
cfg_ev = EnvConfig(max_steps=150, initial_distance_min_m=200, initial_distance_max_m=600)
M, CH, H, BATCH, EPOCHS = 3, (6, 10, 14), 24, 20, 30

print("== criterion 6 calibration: omega1 1.5 vs 0 paired ==", flush=True)
wins = 0
for rep in range(4):
    site = noisy_site(100 + rep)
    ep = ExploreParams(site.tag_reference_rssi)
    effs = {}
    for omega1 in (1.5, 0.0):
        p, rows = train(site, cfg_tr, LossWeights(omega1, 1.0), ep, epochs=EPOCHS,
                        batch_episodes=BATCH, stream=RngStream(rep), m=M,
                        channels=CH, hidden=H)
        pol = CompassPolicy(p, ep, mode="ucb")
        recs = run_episodes(site, cfg_ev, pol, 80, RngStream(7000 + rep))
        effs[omega1] = efficiency(recs, 4, 100.0, 100.0)
        sr = success_rate(recs, 100.0, 100.0)
        print("  rep %d omega1=%.1f: eff %.3f succ %.2f (%.0fs)" % (
            rep, omega1, effs[omega1], sr, time.time() - t00), flush=True)
    wins += effs[1.5] > effs[0.0]
print("criterion6 wins: %d/4" % wins, flush=True)

print("== criterion 7 calibration: epochs to 0.8 train success ==", flush=True)
def epochs_to(target, site, ep, omega2, rep, cap=60):
    p = None
    for chunk in range(cap // 5):
        p, rows = train(site, cfg_tr, LossWeights(1.5, omega2), ep, epochs=5,
                        batch_episodes=BATCH, stream=RngStream(500 + rep), params=p,
                        m=M, channels=CH, hidden=H)
        for row in rows:
            if row["success_rate"] >= target:
                return row["epoch"]
    return cap

for rep in range(3):
    site = noisy_site(200 + rep)
    ep = ExploreParams(site.tag_reference_rssi)
    e1 = epochs_to(0.8, site, ep, 1.0, rep)
    e0 = epochs_to(0.8, site, ep, 0.0, rep)
    print("  rep %d: omega2=1 -> %d epochs, omega2=0 -> %d epochs (%.0fs)" % (
        rep, e1, e0, time.time() - t00), flush=True)
