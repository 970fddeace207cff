# %% [markdown]
# # Corrupting masks
#
# The shape prior learns from pairs of (corrupted, clean) masks. This script
# draws one synthetic two-lung mask and applies each corruption family on its
# own, then the default mixture, and saves a gallery to ``demo_out/``.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from postdae.data import synthetic_masks
from postdae.degrade import DegradationConfig, degrade
from postdae.masks import count_components
from postdae.metrics import dice

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)
mask = synthetic_masks(1, 128, seed=3)[0]
print(f"clean mask: {mask.mean():.1%} foreground, {count_components(mask)} components")

# %% One family at a time: the probabilities pick exactly one family per call.
families = {
    "shapes": DegradationConfig(p_shapes=1, p_morphology=0, p_border_swap=0),
    "morphology": DegradationConfig(p_shapes=0, p_morphology=1, p_border_swap=0),
    "border swap": DegradationConfig(p_shapes=0, p_morphology=0, p_border_swap=1),
    "default mix": DegradationConfig(),
}
fig, axes = plt.subplots(len(families), 5, figsize=(10, 2.2 * len(families)))
for row, (name, cfg) in zip(axes, families.items()):
    for k, ax in enumerate(row):
        corrupted = degrade(mask, cfg, np.random.default_rng([7, k]))
        ax.imshow(corrupted, cmap="gray")
        ax.set_title(f"Dice {dice(mask, corrupted):.2f}", fontsize=7)
        ax.axis("off")
    row[0].text(-0.15, 0.5, name, transform=row[0].transAxes, rotation=90,
                va="center", ha="right", fontsize=8)
fig.tight_layout()
fig.savefig(OUT / "degradation_gallery.png", dpi=100)

# %% How hard is the default corruption on average?
scores = [dice(mask, degrade(mask, rng=np.random.default_rng([11, i]))) for i in range(200)]
print(f"default corruption: mean Dice {np.mean(scores):.3f}, min {np.min(scores):.3f}")
print(f"gallery written to {OUT / 'degradation_gallery.png'}")
