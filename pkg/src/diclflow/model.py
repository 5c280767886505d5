"""Coarse-to-fine pyramid flow model: warp, match, project, read out, refine.

Processing runs from the coarsest (1/64) level to the finest (1/4): the
incoming flow is upsampled, the target features are warped by it, a cost
volume over the +-3 window scores the residual displacement, soft-argmin
turns it into a sub-pixel residual that is added to the incoming flow, and a
dilated context network refines the finest level. The finest flow is then
upsampled x4 to full resolution.
"""

import json

import numpy as np

from . import autodiff as ad
from .features import NUM_LEVELS, FeatureNet, pad_to_multiple, crop_to_original
from .flowhead import DapParams, dap_reweight, soft_argmin2d
from .heads import make_head
from .layers import ConvBlock, ConvSpec, collect_params, collect_stats, load_stats

LOSS_WEIGHTS = (1.0, 0.75, 0.5, 0.5, 0.5)   # finest (1/4) to coarsest (1/64)
LEVEL_SCALES = (4, 8, 16, 32, 64)

CONTEXT_DILATIONS = (1, 2, 4, 8, 16, 1, 1)
CONTEXT_WIDTHS = (32, 32, 32, 32, 16, 16)

CHECKPOINT_VERSION = 1


class ContextNet:
    """Dilated 3x3 stack predicting a residual flow correction.

    The last layer is linear and zero-initialized, so refinement starts as
    the identity.
    """

    def __init__(self, rng, feature_dim=32):
        self.blocks = []
        cin = 2 + feature_dim
        widths = CONTEXT_WIDTHS + (2,)
        for i, (cout, dil) in enumerate(zip(widths, CONTEXT_DILATIONS)):
            last = i == len(widths) - 1
            self.blocks.append(ConvBlock(
                ConvSpec(cin, cout, 3, 3, stride=1, padding=dil, dilation=dil),
                rng, act=not last, zero_init=last))
            cin = cout

    def __call__(self, flow, features, training=False):
        if flow.shape[0] != features.shape[0] or \
           flow.shape[2:] != features.shape[2:]:
            raise ValueError("flow shape %s does not align with features %s"
                             % (flow.shape, features.shape))
        x = ad.concat([flow, features], axis=1)
        for blk in self.blocks:
            x = blk(x, training)
        return ad.add(flow, x)

    def named_params(self):
        return collect_params(self.blocks, "context")

    def named_stats(self):
        return collect_stats(self.blocks, "context")

    def load_stats(self, arrays):
        load_stats(self.blocks, "context", arrays)


def upsample_flow(flow, factor=2):
    """Bilinearly upsample a flow field; vector values scale with resolution."""
    b = flow.ndim == 4
    x = flow if b else ad.reshape(flow, (1,) + flow.shape)
    up = ad.bilinear_resize(x, x.shape[2] * factor, x.shape[3] * factor)
    up = ad.scale(up, float(factor))
    return up if b else ad.reshape(up, up.shape[1:])


def _block_mean(x, f):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // f, f, w // f, f).mean(axis=(3, 5))

def _block_min(x, f):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // f, f, w // f, f).min(axis=(3, 5))


def multi_level_loss(flows, gt_flow, valid):
    """Weighted multi-level loss: per-pixel Euclidean norm of the flow error.

    flows: list of NUM_LEVELS flow Vars, finest first; gt_flow (B,2,H,W) and
    valid (B,1,H,W) ndarrays at full resolution. Ground truth is average-
    pooled to each level with values rescaled; a pooled pixel is valid only if
    its whole block is.
    """
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    valid = np.asarray(valid, dtype=np.float64)
    total = None
    for k, flow in enumerate(flows):
        f = LEVEL_SCALES[k]
        gt_k = _block_mean(gt_flow, f) / f
        mask = _block_min(valid, f)
        count = mask.sum()
        if count == 0:
            continue
        diff = ad.add_const(flow, -gt_k)
        err = ad.channel_norm(diff, axis=1)
        lvl = ad.scale(ad.vsum(ad.mul_const(err, mask)),
                       LOSS_WEIGHTS[k] / count)
        total = lvl if total is None else ad.add(total, lvl)
    if total is None:
        return ad.Var(0.0)
    return total


class FlowModel:
    """Feature net + level-specific cost heads + DAP + context refinement."""

    def __init__(self, head="dicl", dap=True, context=True, seed=0):
        self.config = {"head": head.replace("-", "_"), "dap": bool(dap),
                       "context": bool(context), "seed": int(seed)}
        rng = np.random.default_rng(seed)
        self.feature_net = FeatureNet(rng)
        self.heads = [make_head(head, rng) for _ in range(NUM_LEVELS)]
        self.daps = [DapParams() for _ in range(NUM_LEVELS)]
        self.context_net = ContextNet(rng) if context else None
        self.use_dap = bool(dap)

    # ----- forward ---------------------------------------------------------

    def forward(self, img1, img2, training=False):
        """img1, img2: ndarrays (B,3,H,W) in [0,1], H and W multiples of 64.

        Returns a dict with per-level flows (finest first), the x4-upsampled
        full-resolution flow, and per-level probability volumes.
        """
        img1 = np.asarray(img1, dtype=np.float64)
        img2 = np.asarray(img2, dtype=np.float64)
        if img1.shape != img2.shape:
            raise ValueError("frame shapes differ: %s vs %s"
                             % (img1.shape, img2.shape))
        # inference passes never run backward, so do not retain conv columns
        ad.set_tap_cache(training)
        try:
            return self._forward_impl(img1, img2, training)
        finally:
            ad.set_tap_cache(True)

    def _forward_impl(self, img1, img2, training):
        b, _, h, w = img1.shape
        stacked = np.concatenate([img1, img2], axis=0)
        stacked = stacked - stacked.mean(axis=(1, 2, 3), keepdims=True)
        feats = self.feature_net.extract_batch(ad.Var(stacked), training)
        f1s = [ad.slice_batch(f, 0, b) for f in feats]
        f2s = [ad.slice_batch(f, b, 2 * b) for f in feats]

        flow = None
        flows = [None] * NUM_LEVELS
        probs = [None] * NUM_LEVELS
        for k in range(NUM_LEVELS - 1, -1, -1):
            f1, f2 = f1s[k], f2s[k]
            hk, wk = f1.shape[2], f1.shape[3]
            if flow is None:
                flow_in = ad.Var(np.zeros((b, 2, hk, wk)))
            else:
                flow_in = upsample_flow(flow)
            warped, _ = ad.bilinear_warp(f2, flow_in)
            # cost heads with a stride-2 stage need even sizes; pad and crop
            pe_h, pe_w = hk % 2, wk % 2
            cost = self.heads[k].cost_volume_batch(
                ad.pad_br(f1, pe_h, pe_w), ad.pad_br(warped, pe_h, pe_w),
                training)
            cost = ad.crop_br(cost, hk, wk)
            if self.use_dap:
                cost = dap_reweight(cost, self.daps[k])
            residual, p = soft_argmin2d(cost)
            flow = ad.add(flow_in, residual)
            if k == 0 and self.context_net is not None:
                flow = self.context_net(flow, f1, training)
            flows[k] = flow
            probs[k] = p
        full = ad.scale(ad.bilinear_resize(flows[0], h, w), 4.0)
        return {"flows": flows, "full_res": full, "probs": probs}

    def infer_flow(self, img1, img2):
        """Symmetric inference for a batch: average the forward flow with the
        back-warped, negated backward flow.

        The backward flow sampled at the forward end points and negated is a
        second estimate of the same motion with partly independent errors, so
        the average is less noisy than either pass alone. Pixels whose
        forward flow leaves the frame keep the forward estimate.
        Returns (fused flow ndarray (B,2,H,W), forward output dict).
        """
        out = self.forward(img1, img2, training=False)
        fwd = out["full_res"].value
        back = self.forward(img2, img1, training=False)["full_res"].value
        warped, ok = ad.bilinear_warp(ad.Var(back), ad.Var(fwd))
        fused = np.where(ok > 0.5, 0.5 * (fwd - warped.value), fwd)
        return fused, out

    def predict(self, img1, img2):
        """Single pair (3,H,W) at any size -> (flow (2,H,W), finest probs)."""
        p1, size = pad_to_multiple(np.asarray(img1, dtype=np.float64)[None])
        p2, _ = pad_to_multiple(np.asarray(img2, dtype=np.float64)[None])
        fused, out = self.infer_flow(p1, p2)
        flow = crop_to_original(fused[0], size)
        return flow, out["probs"][0].value[0]

    # ----- training --------------------------------------------------------

    def train_step(self, batch, optimizer):
        """One gradient step on a batch of FlowSamples; returns the loss."""
        img1 = np.stack([s.img1 for s in batch])
        img2 = np.stack([s.img2 for s in batch])
        gt = np.stack([s.gt_flow for s in batch])
        valid = np.stack([s.valid for s in batch])
        out = self.forward(img1, img2, training=True)
        loss = multi_level_loss(out["flows"], gt, valid)
        optimizer.zero_grad()
        ad.backward(loss)
        optimizer.step()
        return float(loss.value)

    # ----- parameters and persistence --------------------------------------

    def named_params(self):
        out = dict(self.feature_net.named_params())
        for k, head in enumerate(self.heads):
            out.update(head.named_params("head%d" % k))
        for k, dap in enumerate(self.daps):
            out.update(dap.named_params("dap%d" % k))
        if self.context_net is not None:
            out.update(self.context_net.named_params())
        return out

    def parameters(self):
        return list(self.named_params().values())

    def named_stats(self):
        out = dict(self.feature_net.named_stats())
        for k, head in enumerate(self.heads):
            out.update(head.named_stats("head%d" % k))
        if self.context_net is not None:
            out.update(self.context_net.named_stats())
        return out

    def _load_stats(self, arrays):
        self.feature_net.load_stats(arrays)
        for k, head in enumerate(self.heads):
            head.load_stats("head%d" % k, arrays)
        if self.context_net is not None:
            self.context_net.load_stats(arrays)


def save_checkpoint(model, path, extra=None):
    """Versioned binary container: config echo plus all named tensors."""
    meta = {"version": CHECKPOINT_VERSION, "config": model.config}
    if extra:
        meta["extra"] = extra
    arrays = {"meta": np.array(json.dumps(meta))}
    for name, var in model.named_params().items():
        arrays["param:" + name] = var.value
    for name, arr in model.named_stats().items():
        arrays["stat:" + name] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError("checkpoint version %r not supported (expected %d)"
                             % (meta.get("version"), CHECKPOINT_VERSION))
        cfg = meta["config"]
        model = FlowModel(head=cfg["head"], dap=cfg["dap"],
                          context=cfg["context"], seed=cfg["seed"])
        params = model.named_params()
        for name, var in params.items():
            key = "param:" + name
            if key not in data:
                raise ValueError("checkpoint is missing tensor %r" % name)
            arr = data[key]
            if arr.shape != var.value.shape:
                raise ValueError("checkpoint tensor %r has shape %s, "
                                 "expected %s" % (name, arr.shape,
                                                  var.value.shape))
            var.value = arr.astype(np.float64)
            var.grad = np.zeros_like(var.value)
        stats = {k[len("stat:"):]: data[k] for k in data.files
                 if k.startswith("stat:")}
        model._load_stats(stats)
    return model, meta
