"""Train the search policy on a small noisy site and plot the learning curve.

Desk-scale settings (small window, small site) so the run finishes in a few
minutes; bump m / extent / epochs for paper-scale behavior.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from loracompass import nnet
from loracompass.env import EnvConfig
from loracompass.evaluate import run_episodes, success_rate
from loracompass.grid import RngStream
from loracompass.policy import CompassPolicy, ExploreParams, LossWeights, train
from loracompass.sites import SiteGenParams, generate_site, save_site

site = generate_site(
    SiteGenParams(extent=8, sample_noise_sigma_db=6.0, shadowing_sigma_db=2.0,
                  loss_prob_at_far_edge=0.1, seed=5),
    tag=(0, 0),
)
save_site(site, "train_site.json")
explore = ExploreParams(site.tag_reference_rssi, beta=8.0, alpha=0.5)
cfg_train = EnvConfig(max_steps=70, initial_distance_min_m=200, initial_distance_max_m=700)
cfg_eval = EnvConfig(max_steps=200, initial_distance_min_m=200, initial_distance_max_m=700)

params = None
curve = []
for block in range(12):
    params, rows = train(
        site, cfg_train, LossWeights(), explore,
        epochs=10, batch_episodes=25, stream=RngStream(0), params=params,
        m=4, channels=(8, 12, 16), hidden=32, lr=2.5e-3,
    )
    policy = CompassPolicy(params, explore, mode="ucb")
    records = run_episodes(site, cfg_eval, policy, 80, RngStream(99))
    sr = success_rate(records, 100.0, site.grid_size_m)
    curve.append((params.t, sr))
    print("epoch %3d  deployed success %.3f" % (params.t, sr))

nnet.save_checkpoint(params, "policy.ckpt")
print("wrote policy.ckpt")

fig, ax = plt.subplots(figsize=(6, 4))
ax.plot([c[0] for c in curve], [c[1] for c in curve], "o-")
ax.set_xlabel("training epoch")
ax.set_ylabel("success rate (deployed)")
ax.set_ylim(0, 1)
ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig("learning_curve.png", dpi=120)
print("wrote learning_curve.png")
