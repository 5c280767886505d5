"""Walk through one matching step: features, cost volume, soft-argmin.

Generates a synthetic pair with a known constant translation, extracts
features, scores all 49 displacement hypotheses at the quarter-resolution
level, and reads the flow back out. With untrained weights the readout is
noisy; the point is to see the shapes and the hypothesis ordering at work.

Run: python3 demos/01_cost_volume_tour.py
"""

import numpy as np

from diclflow import autodiff as ad
from diclflow.data import gen_synthetic
from diclflow.features import FeatureNet
from diclflow.flowhead import soft_argmin2d
from diclflow.matching import (MatchingNet, build_cost_volume,
                               index_displacement)

rng_seed = 7
sample = gen_synthetic(rng_seed, "translation", (64, 64), 4.0)
true_u = sample.gt_flow[0, 0, 0]
true_v = sample.gt_flow[1, 0, 0]
print("ground-truth translation: u=%.2f v=%.2f pixels" % (true_u, true_v))

net = FeatureNet(np.random.default_rng(0))
imgs = np.stack([sample.img1, sample.img2])
imgs = imgs - imgs.mean(axis=(1, 2, 3), keepdims=True)
levels = net.extract_batch(ad.Var(imgs), training=False)
f1 = ad.Var(levels[0].value[0])      # quarter resolution, (32, 16, 16)
f2 = ad.Var(levels[0].value[1])
print("feature pyramid levels:", [tuple(l.shape[2:]) for l in levels])

matcher = MatchingNet(np.random.default_rng(1))
volume = build_cost_volume(f1, f2, matcher)
print("cost volume shape:", volume.shape, "(v-index, u-index, h, w)")

# the hypothesis axis is row-major over (v, u) with (-3, -3) first
for n in (0, 24, 48):
    d = index_displacement(n)
    print("  hypothesis %2d -> displacement u=%+d v=%+d" % (n, d.u, d.v))

flow, probs = soft_argmin2d(volume)
print("soft-argmin flow shape:", flow.shape)
print("mean readout (untrained net): u=%.2f v=%.2f; "
      "a trained net would move this toward u=%.2f v=%.2f"
      % (flow.value[0].mean(), flow.value[1].mean(), true_u / 4, true_v / 4))
print("per-pixel probabilities sum to %.6f" % probs.value.sum(axis=(0, 1))[0, 0])
