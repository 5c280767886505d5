"""Siamese feature extractor: five pyramid levels of 32-dim features.

Levels cover scales 1/4, 1/8, 1/16, 1/32, 1/64 of the (padded) input. Each
stage is conv(stride 2)-BN-ReLU-conv(stride 1)-BN-ReLU; a stem stage brings
the image to 1/2 first, so the first emitted level sits at 1/4. Every level
gets a 1x1 projection to exactly 32 channels. Both frames are processed with
the same parameters.
"""

import numpy as np

from . import autodiff as ad
from .layers import (ConvBlock, ConvSpec, collect_params, collect_stats,
                     load_stats)

NUM_LEVELS = 5
FEATURE_DIM = 32
SIZE_MULTIPLE = 64

# per-stage output channels: stem (1/2) then the five emitted scales
_STAGE_CHANNELS = (16, 24, 32, 32, 32, 32)


class FeaturePyramid:
    """Five per-level feature maps, finest (1/4) first."""

    def __init__(self, levels):
        if len(levels) != NUM_LEVELS:
            raise ValueError("expected %d levels, got %d"
                             % (NUM_LEVELS, len(levels)))
        self.levels = list(levels)

    def __getitem__(self, k):
        return self.levels[k]

    def __len__(self):
        return len(self.levels)


class FeatureNet:
    def __init__(self, rng):
        self.stages = []
        cin = 3
        for cout in _STAGE_CHANNELS:
            self.stages.append([
                ConvBlock(ConvSpec(cin, cout, 3, 3, stride=2, padding=1),
                          rng, bn=True, act=True),
                ConvBlock(ConvSpec(cout, cout, 3, 3, stride=1, padding=1),
                          rng, bn=True, act=True),
            ])
            cin = cout
        self.proj = [
            ConvBlock(ConvSpec(c, FEATURE_DIM, 1, 1), rng)
            for c in _STAGE_CHANNELS[1:]
        ]

    def extract_batch(self, images, training=False):
        """images: Var (N,3,H,W) with H, W multiples of 64, values in [0,1].

        Returns a list of NUM_LEVELS feature Vars, finest first.
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError("expected (N,3,H,W) images, got %s"
                             % (images.shape,))
        h, w = images.shape[2], images.shape[3]
        if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
            raise ValueError(
                "image size %dx%d is not a multiple of %d; pad first"
                % (h, w, SIZE_MULTIPLE))
        x = images
        levels = []
        for i, stage in enumerate(self.stages):
            for blk in stage:
                x = blk(x, training)
            if i >= 1:
                levels.append(self.proj[i - 1](x, training))
        return levels

    def extract(self, image):
        """Single image (3,H,W) -> FeaturePyramid, running-stat batch norm."""
        if image.ndim != 3:
            raise ValueError("expected (3,H,W) image, got %s" % (image.shape,))
        batch = ad.reshape(image, (1,) + image.shape)
        levels = self.extract_batch(batch, training=False)
        return FeaturePyramid([ad.reshape(f, f.shape[1:]) for f in levels])

    def named_params(self):
        out = {}
        for i, stage in enumerate(self.stages):
            out.update(collect_params(stage, "feature.stage%d" % i))
        out.update(collect_params(self.proj, "feature.proj"))
        return out

    def named_stats(self):
        out = {}
        for i, stage in enumerate(self.stages):
            out.update(collect_stats(stage, "feature.stage%d" % i))
        return out

    def load_stats(self, arrays):
        for i, stage in enumerate(self.stages):
            load_stats(stage, "feature.stage%d" % i, arrays)


def pad_to_multiple(image, multiple=SIZE_MULTIPLE):
    """Zero-pad bottom/right to the next multiple; returns (padded, (H, W))."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[-2], img.shape[-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    pads = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pads), (h, w)


def crop_to_original(field, size_record):
    """Crop a full-resolution output back to the pre-padding size."""
    h, w = size_record
    return np.ascontiguousarray(np.asarray(field)[..., :h, :w])


def normalize_image(image):
    """Scale to [0,1] if needed and subtract the per-image mean."""
    img = np.asarray(image, dtype=np.float64)
    if img.max() > 1.5:
        img = img / 255.0
    return img - img.mean()
