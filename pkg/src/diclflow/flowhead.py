"""From costs to flow: hypothesis reweighting, 2D soft-argmin, diagnostics.

The displacement-aware projection (DAP) linearly remixes the 49 hypothesis
costs at every pixel (a 1x1 convolution over the hypothesis axis). Soft-argmin
converts costs to the expected displacement under softmax(-cost), giving a
sub-pixel flow bounded by the search window.
"""

import numpy as np

from . import autodiff as ad
from .matching import NUM_HYPOTHESES, WINDOW, index_displacement


def _u_grid():
    return np.array([index_displacement(n).u for n in range(NUM_HYPOTHESES)],
                    dtype=np.float64)


def _v_grid():
    return np.array([index_displacement(n).v for n in range(NUM_HYPOTHESES)],
                    dtype=np.float64)


class DapParams:
    """One 49x49 reweighting matrix plus bias, per pyramid level.

    Initialized to the identity with zero bias so an untrained DAP is a
    strict no-op and the no-DAP ablation is the training starting point.
    """

    def __init__(self, n=NUM_HYPOTHESES):
        self.weight = ad.Var(np.eye(n))
        self.bias = ad.Var(np.zeros(n))

    def named_params(self, prefix):
        return {prefix + ".weight": self.weight, prefix + ".bias": self.bias}


def _as_batch(volume):
    """Normalize (49,h,w) / (7,7,h,w) / (B,49,h,w) to (B,49,h,w) + restorer."""
    if volume.ndim == 4 and volume.shape[:2] == (WINDOW, WINDOW):
        h, w = volume.shape[2:]
        return (ad.reshape(volume, (1, NUM_HYPOTHESES, h, w)),
                lambda x: ad.reshape(x, (WINDOW, WINDOW, h, w)))
    if volume.ndim == 3 and volume.shape[0] == NUM_HYPOTHESES:
        return (ad.reshape(volume, (1,) + volume.shape),
                lambda x: ad.reshape(x, x.shape[1:]))
    if volume.ndim == 4 and volume.shape[1] == NUM_HYPOTHESES:
        return volume, lambda x: x
    raise ValueError("expected a %d-hypothesis cost volume, got shape %s"
                     % (NUM_HYPOTHESES, volume.shape))


def dap_reweight(volume, dap):
    """Linearly remix the hypothesis costs at every pixel by the DAP matrix."""
    if dap.weight.shape != (NUM_HYPOTHESES, NUM_HYPOTHESES):
        raise ValueError("DAP matrix shape %s does not match %d hypotheses"
                         % (dap.weight.shape, NUM_HYPOTHESES))
    batch, restore = _as_batch(volume)
    kernel = ad.reshape(dap.weight, (NUM_HYPOTHESES, NUM_HYPOTHESES, 1, 1))
    return restore(ad.conv2d(batch, kernel, dap.bias))


def soft_argmin2d(volume):
    """Expected displacement under softmax(-cost).

    Returns (flow, probs): flow has channels (u, v) bounded by the window
    radius; probs is the per-pixel probability volume (sums to 1).
    """
    batch, restore = _as_batch(volume)
    b, _, h, w = batch.shape
    probs = ad.softmax(ad.scale(batch, -1.0), axis=1)
    ug = _u_grid().reshape(1, NUM_HYPOTHESES, 1, 1)
    vg = _v_grid().reshape(1, NUM_HYPOTHESES, 1, 1)
    fu = ad.sum_axis(ad.mul_const(probs, ug), axis=1, keepdims=True)
    fv = ad.sum_axis(ad.mul_const(probs, vg), axis=1, keepdims=True)
    flow = ad.concat([fu, fv], axis=1)
    if volume.ndim == 3 or volume.shape[:2] == (WINDOW, WINDOW):
        flow = ad.reshape(flow, (2, h, w))
    return flow, restore(probs)


def d_peak(probs):
    """Per-pixel gap between the two largest hypothesis probabilities.

    Accepts a probability volume as ndarray or Var, any of the layouts
    handled by the flow readout; returns an ndarray (..., 1, h, w) in [0,1].
    """
    p = probs.value if isinstance(probs, ad.Var) else np.asarray(probs)
    if p.ndim == 4 and p.shape[:2] == (WINDOW, WINDOW):
        flat = p.reshape(NUM_HYPOTHESES, *p.shape[2:])
        axis = 0
    elif p.ndim == 3 and p.shape[0] == NUM_HYPOTHESES:
        flat, axis = p, 0
    elif p.ndim == 4 and p.shape[1] == NUM_HYPOTHESES:
        flat, axis = p, 1
    else:
        raise ValueError("unrecognized probability volume shape %s"
                         % (p.shape,))
    top2 = -np.partition(-flat, 1, axis=axis)
    gap = np.take(top2, 0, axis=axis) - np.take(top2, 1, axis=axis)
    return np.expand_dims(gap, axis)
