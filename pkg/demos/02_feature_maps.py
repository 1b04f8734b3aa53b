"""Watch the three feature channels build up along a short search.

Runs a spiral for a few dozen steps on a noisy site and renders the signal,
variation, and visibility windows the policy network would see.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from loracompass.baselines import SpiralSearcher
from loracompass.env import EnvConfig, reset, step
from loracompass.features import extract
from loracompass.grid import RngStream
from loracompass.sites import SiteGenParams, generate_site

site = generate_site(SiteGenParams(extent=15, sample_noise_sigma_db=5.0, seed=3), tag=(0, 0))
cfg = EnvConfig(max_steps=60, initial_distance_min_m=300, initial_distance_max_m=600)
state = reset(site, cfg, RngStream(0).child(0))
searcher = SpiralSearcher()
ctx = searcher.make_controller()

snapshots = {}
for k in range(60):
    if k in (5, 25, 59):
        snapshots[k] = extract(state, m=10)
    step(state, site, searcher.decide_one(state, ctx, None), cfg)

fig, axes = plt.subplots(len(snapshots), 3, figsize=(10, 3.2 * len(snapshots)))
for row, (k, maps) in enumerate(sorted(snapshots.items())):
    for col, (name, grid) in enumerate(
        [("signal", maps.signal), ("variation", maps.variation), ("visibility", maps.visibility)]
    ):
        ax = axes[row][col]
        im = ax.imshow(grid.T, origin="lower", cmap="viridis")
        ax.set_title("step %d: %s" % (k, name))
        fig.colorbar(im, ax=ax)
fig.tight_layout()
fig.savefig("feature_maps.png", dpi=120)
print("wrote feature_maps.png")
