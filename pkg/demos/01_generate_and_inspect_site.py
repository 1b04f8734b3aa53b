"""Generate a synthetic site and look at its RSSI landscape.

Produces site.json plus a heatmap figure of the expected RSSI and a couple
of sampled snapshots, the qualitative picture behind the whole search idea:
noisy cell by cell, but clearly brighter toward the tag.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from loracompass.grid import RngStream
from loracompass.sites import SiteGenParams, generate_site, sample_rssi, save_site

params = SiteGenParams(
    base_power_dbm=-40.0,
    path_loss_exponent=2.7,
    shadowing_sigma_db=4.0,
    shadowing_correlation_cells=3.0,
    sample_noise_sigma_db=6.0,
    loss_prob_at_far_edge=0.3,
    samples_per_cell=50,
    extent=25,
    seed=7,
)
site = generate_site(params, tag=(0, 0))
save_site(site, "site.json")
print("wrote site.json; tag reference RSSI %.2f dBm" % site.tag_reference_rssi)

n = site.extent
fig, axes = plt.subplots(1, 3, figsize=(14, 4.4))
im = axes[0].imshow(site.mean_map().T, origin="lower", extent=(-n, n, -n, n), cmap="viridis")
axes[0].set_title("expected RSSI (dBm)")
fig.colorbar(im, ax=axes[0])

gen = RngStream(1).child("demo").generator()
for k, ax in enumerate(axes[1:], start=1):
    snap = np.array(
        [[sample_rssi(site, (i, j), gen) for j in range(-n, n + 1)] for i in range(-n, n + 1)]
    )
    im = ax.imshow(snap.T, origin="lower", extent=(-n, n, -n, n), cmap="viridis", vmin=-120)
    ax.set_title("sampled snapshot %d" % k)
    fig.colorbar(im, ax=ax)

for ax in axes:
    ax.plot(0, 0, "r*", markersize=12)
fig.tight_layout()
fig.savefig("site_heatmaps.png", dpi=120)
print("wrote site_heatmaps.png")
