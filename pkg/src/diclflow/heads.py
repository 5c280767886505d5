"""Interchangeable cost heads for the ablation study.

Every head maps a feature pair (B,32,h,w) x2 to a cost volume (B,49,h,w)
under the shared hypothesis ordering, so the rest of the pipeline does not
care which one is plugged in. Similarity-based heads negate their score so
that lower always means a better match.
"""

from . import autodiff as ad
from .layers import ConvBlock, ConvSpec, collect_params, collect_stats, load_stats
from .matching import (MAX_DISPLACEMENT, NUM_HYPOTHESES, MatchingNet,
                       index_displacement)

HEAD_KINDS = ("dot", "cosine", "mlp3", "reduced_dicl", "dicl")

MLP_WIDTHS = (64, 64, 1)

# DICL layer structure with every kernel collapsed to 1x1; the stride-2
# down/up pair keeps its strides (the transposed 1x1 needs output_padding to
# restore an even input size).
REDUCED_DICL_SPECS = (
    ConvSpec(64, 96, 1, 1, stride=1),
    ConvSpec(96, 128, 1, 1, stride=2),
    ConvSpec(128, 128, 1, 1, stride=1),
    ConvSpec(128, 64, 1, 1, stride=1),
    ConvSpec(64, 32, 1, 1, stride=2, transposed=True, output_padding=1),
    ConvSpec(32, 1, 1, 1, stride=1),
)


def dot_cost(f1, f2, d):
    """Negated dot product <F1(p), F2(p+d)> as a (B,1,h,w) or (1,h,w) cost."""
    shifted = ad.shift2d(f2, d.u, d.v)
    sim = ad.sum_axis(ad.mul(f1, shifted), axis=f1.ndim - 3, keepdims=True)
    return ad.scale(sim, -1.0)


def cosine_cost(f1, f2, d, eps=1e-9):
    """Negated cosine similarity with an epsilon-guarded denominator."""
    ax = f1.ndim - 3
    shifted = ad.shift2d(f2, d.u, d.v)
    dot = ad.sum_axis(ad.mul(f1, shifted), axis=ax, keepdims=True)
    n1 = ad.channel_norm(f1, axis=ax, keepdims=True)
    n2 = ad.channel_norm(shifted, axis=ax, keepdims=True)
    denom = ad.add_const(ad.mul(n1, n2), eps)
    sim = ad.mul(dot, ad.reciprocal(denom))
    return ad.scale(sim, -1.0)


class DotHead:
    kind = "dot"

    def __init__(self, rng=None):
        pass

    def cost_volume_batch(self, f1, f2, training=False):
        b, _, h, w = f1.shape
        costs = [dot_cost(f1, f2, index_displacement(n))
                 for n in range(NUM_HYPOTHESES)]
        return ad.concat(costs, axis=1)

    def named_params(self, prefix):
        return {}

    def named_stats(self, prefix):
        return {}

    def load_stats(self, prefix, arrays):
        pass


class CosineHead(DotHead):
    kind = "cosine"

    def cost_volume_batch(self, f1, f2, training=False):
        costs = [cosine_cost(f1, f2, index_displacement(n))
                 for n in range(NUM_HYPOTHESES)]
        return ad.concat(costs, axis=1)


class _ConvStackHead:
    """Shared machinery for heads that run a conv stack over the 49-batch."""

    def __init__(self, blocks):
        self.blocks = blocks

    def _apply(self, x, training):
        for blk in self.blocks:
            x = blk(x, training)
        return x

    def cost_volume_batch(self, f1, f2, training=False):
        b, _, h, w = f1.shape
        stacked = ad.displacement_stack(f1, f2, MAX_DISPLACEMENT)
        out = self._apply(stacked, training)
        return ad.reshape(out, (b, NUM_HYPOTHESES, h, w))

    def named_params(self, prefix):
        return collect_params(self.blocks, prefix)

    def named_stats(self, prefix):
        return collect_stats(self.blocks, prefix)

    def load_stats(self, prefix, arrays):
        load_stats(self.blocks, prefix, arrays)


class Mlp3Head(_ConvStackHead):
    """Per-pixel 3-layer MLP (64->64->64->1), shared across pixels and
    displacements; realized as 1x1 convolutions."""

    kind = "mlp3"

    def __init__(self, rng):
        blocks = []
        cin = 64
        for i, width in enumerate(MLP_WIDTHS):
            last = i == len(MLP_WIDTHS) - 1
            blocks.append(ConvBlock(ConvSpec(cin, width, 1, 1), rng,
                                    act=not last))
            cin = width
        super().__init__(blocks)

    def cost(self, f_u, training=False):
        """Cost map for one hypothesis's concatenated features."""
        squeeze = f_u.ndim == 3
        x = ad.reshape(f_u, (1,) + f_u.shape) if squeeze else f_u
        out = self._apply(x, training)
        return ad.reshape(out, out.shape[1:]) if squeeze else out


class ReducedDiclHead(_ConvStackHead):
    """DICL structure with all kernels reduced to 1x1 (no spatial context)."""

    kind = "reduced_dicl"

    def __init__(self, rng):
        blocks = []
        last = len(REDUCED_DICL_SPECS) - 1
        for i, spec in enumerate(REDUCED_DICL_SPECS):
            blocks.append(ConvBlock(spec, rng, bn=(i != last),
                                    act=(i != last)))
        super().__init__(blocks)

    def cost(self, f_u, training=False):
        squeeze = f_u.ndim == 3
        x = ad.reshape(f_u, (1,) + f_u.shape) if squeeze else f_u
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError("reduced head needs even spatial size")
        out = self._apply(x, training)
        return ad.reshape(out, out.shape[1:]) if squeeze else out


class DiclHead:
    kind = "dicl"

    def __init__(self, rng):
        self.net = MatchingNet(rng)

    def cost_volume_batch(self, f1, f2, training=False):
        from .matching import cost_volume_batch
        return cost_volume_batch(f1, f2, self.net, training)

    def named_params(self, prefix):
        return self.net.named_params(prefix)

    def named_stats(self, prefix):
        return self.net.named_stats(prefix)

    def load_stats(self, prefix, arrays):
        self.net.load_stats(prefix, arrays)


_HEAD_CLASSES = {
    "dot": DotHead,
    "cosine": CosineHead,
    "mlp3": Mlp3Head,
    "reduced_dicl": ReducedDiclHead,
    "dicl": DiclHead,
}


def make_head(kind, rng):
    kind = kind.replace("-", "_")
    if kind not in _HEAD_CLASSES:
        raise ValueError("unknown cost head %r; choose from %s"
                         % (kind, "/".join(HEAD_KINDS)))
    return _HEAD_CLASSES[kind](rng)
