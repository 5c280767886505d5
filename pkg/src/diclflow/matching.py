"""Learned matching costs: one shared 2D net applied per displacement.

For every displacement hypothesis (u, v) in the search window the reference
features and the shifted target features are concatenated channel-wise and fed
through the same six-layer matching net, yielding one scalar cost per pixel
and hypothesis. The resulting volume is (2r+1) x (2r+1) x h x w with r = 3.

Hypothesis ordering is a wire contract shared with the projection layer and
the soft-argmin readout: row-major over (v, u) with (-3, -3) first, i.e.
volume index (i, j) holds displacement v = i - 3, u = j - 3.
"""

from dataclasses import dataclass

from . import autodiff as ad
from .layers import ConvBlock, ConvSpec, collect_params, collect_stats, load_stats

MAX_DISPLACEMENT = 3
WINDOW = 2 * MAX_DISPLACEMENT + 1          # 7
NUM_HYPOTHESES = WINDOW * WINDOW           # 49

# [C_in, C_out, kernel, stride] for the six layers; layer 5 is transposed.
MATCHING_NET_SPECS = (
    ConvSpec(64, 96, 3, 3, stride=1, padding=1),
    ConvSpec(96, 128, 3, 3, stride=2, padding=1),
    ConvSpec(128, 128, 3, 3, stride=1, padding=1),
    ConvSpec(128, 64, 3, 3, stride=1, padding=1),
    ConvSpec(64, 32, 4, 4, stride=2, padding=1, transposed=True),
    ConvSpec(32, 1, 3, 3, stride=1, padding=1),
)


@dataclass(frozen=True)
class Displacement:
    u: int
    v: int

    def __post_init__(self):
        if abs(self.u) > MAX_DISPLACEMENT or abs(self.v) > MAX_DISPLACEMENT:
            raise ValueError("displacement (%d,%d) outside +-%d window"
                             % (self.u, self.v, MAX_DISPLACEMENT))


def hypothesis_index(d):
    """Volume index of a displacement under the (v, u) row-major contract."""
    return (d.v + MAX_DISPLACEMENT) * WINDOW + (d.u + MAX_DISPLACEMENT)


def index_displacement(n):
    return Displacement(u=n % WINDOW - MAX_DISPLACEMENT,
                        v=n // WINDOW - MAX_DISPLACEMENT)


class MatchingNet:
    """The six-layer cost net; BN + ReLU on all layers but the last."""

    def __init__(self, rng):
        self.blocks = []
        last = len(MATCHING_NET_SPECS) - 1
        for i, spec in enumerate(MATCHING_NET_SPECS):
            self.blocks.append(ConvBlock(spec, rng, bn=(i != last),
                                         act=(i != last)))

    def __call__(self, f_u, training=False):
        squeeze = f_u.ndim == 3
        x = ad.reshape(f_u, (1,) + f_u.shape) if squeeze else f_u
        if x.shape[1] != MATCHING_NET_SPECS[0].in_channels:
            raise ValueError("matching net expects %d input channels, got %d"
                             % (MATCHING_NET_SPECS[0].in_channels, x.shape[1]))
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError("matching net needs even spatial size, got %dx%d"
                             % (x.shape[2], x.shape[3]))
        for blk in self.blocks:
            x = blk(x, training)
        return ad.reshape(x, x.shape[1:]) if squeeze else x

    def affine_param_count(self):
        return sum(s.affine_param_count() for s in MATCHING_NET_SPECS)

    def named_params(self, prefix):
        return collect_params(self.blocks, prefix)

    def named_stats(self, prefix):
        return collect_stats(self.blocks, prefix)

    def load_stats(self, prefix, arrays):
        load_stats(self.blocks, prefix, arrays)


def concat_displaced(f1, f2, d):
    """Concatenate f1 with f2 shifted so channel block 2 holds F2(p + d).

    f1, f2: Vars (32,h,w) or (B,32,h,w); d: Displacement. Out-of-range target
    samples are zero.
    """
    if f1.shape != f2.shape:
        raise ValueError("feature shapes differ: %s vs %s"
                         % (f1.shape, f2.shape))
    shifted = ad.shift2d(f2, d.u, d.v)
    return ad.concat([f1, shifted], axis=f1.ndim - 3)


def matching_cost(f_u, net, training=False):
    """Apply the matching net to one hypothesis's concatenated features."""
    return net(f_u, training)


def cost_volume_batch(f1, f2, net, training=False):
    """Costs for all hypotheses of a batch: (B,32,h,w) x2 -> (B,49,h,w).

    All hypotheses run through the same net as one batch of B*49, so batch
    norm statistics are shared across displacements.
    """
    b, _, h, w = f1.shape
    stacked = ad.displacement_stack(f1, f2, MAX_DISPLACEMENT)
    costs = net(stacked, training)                     # (B*49, 1, h, w)
    return ad.reshape(costs, (b, NUM_HYPOTHESES, h, w))


def build_cost_volume(f1, f2, net, training=False):
    """Single-sample cost volume (32,h,w) x2 -> (7,7,h,w)."""
    if f1.ndim != 3:
        raise ValueError("expected (32,h,w) features, got %s" % (f1.shape,))
    f1b = ad.reshape(f1, (1,) + f1.shape)
    f2b = ad.reshape(f2, (1,) + f2.shape)
    vol = cost_volume_batch(f1b, f2b, net, training)
    return ad.reshape(vol, (WINDOW, WINDOW) + f1.shape[1:])
