"""Layer specifications and small parameterized building blocks."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class ConvSpec:
    """Shape contract of one 2D (de)convolution layer.

    Weight tensor shape is (out_channels, in_channels, kernel_h, kernel_w);
    bias shape is (out_channels,).
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    dilation: int = 1
    output_padding: int = 0

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("kernel extents must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0 or self.dilation < 1:
            raise ValueError("invalid padding/dilation")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels,
                self.kernel_h, self.kernel_w)

    def affine_param_count(self):
        return int(np.prod(self.weight_shape)) + self.out_channels


class ConvBlock:
    """Conv (or deconv) with optional batch norm and ReLU."""

    def __init__(self, spec, rng, bn=False, act=False, zero_init=False):
        self.spec = spec
        self.bn = bn
        self.act = act
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        if zero_init:
            w = np.zeros(spec.weight_shape)
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), spec.weight_shape)
        self.weight = ad.Var(w)
        self.bias = ad.Var(np.zeros(spec.out_channels))
        if bn:
            self.gamma = ad.Var(np.ones(spec.out_channels))
            self.beta = ad.Var(np.zeros(spec.out_channels))
            self.bn_state = ad.BatchNormState(spec.out_channels)

    def __call__(self, x, training=False):
        s = self.spec
        if s.transposed:
            y = ad.deconv2d(x, self.weight, self.bias, s.stride, s.padding,
                            s.output_padding)
        else:
            y = ad.conv2d(x, self.weight, self.bias, s.stride, s.padding,
                          s.dilation)
        if self.bn:
            y = ad.batchnorm2d(y, self.gamma, self.beta, self.bn_state,
                               training)
        if self.act:
            y = ad.relu(y)
        return y

    def named_params(self, prefix):
        out = {prefix + ".weight": self.weight, prefix + ".bias": self.bias}
        if self.bn:
            out[prefix + ".gamma"] = self.gamma
            out[prefix + ".beta"] = self.beta
        return out

    def named_stats(self, prefix):
        if not self.bn:
            return {}
        st = self.bn_state
        return {prefix + ".running_mean": st.running_mean,
                prefix + ".running_var": st.running_var}

    def load_stats(self, prefix, arrays):
        if self.bn:
            self.bn_state.running_mean = arrays[prefix + ".running_mean"].copy()
            self.bn_state.running_var = arrays[prefix + ".running_var"].copy()


def collect_params(blocks, prefix):
    out = {}
    for i, blk in enumerate(blocks):
        out.update(blk.named_params("%s.%d" % (prefix, i)))
    return out


def collect_stats(blocks, prefix):
    out = {}
    for i, blk in enumerate(blocks):
        out.update(blk.named_stats("%s.%d" % (prefix, i)))
    return out


def load_stats(blocks, prefix, arrays):
    for i, blk in enumerate(blocks):
        blk.load_stats("%s.%d" % (prefix, i), arrays)
