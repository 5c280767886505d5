"""Synthetic flow samples with exact ground truth, metrics, and flow I/O."""

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25


@dataclass
class FlowSample:
    img1: np.ndarray      # (3,H,W) in [0,1]
    img2: np.ndarray      # (3,H,W) in [0,1]
    gt_flow: np.ndarray   # (2,H,W), pixels
    valid: np.ndarray     # (1,H,W) in {0,1}


@dataclass
class EvalResult:
    epe: float
    fl_all: float


# ---------------------------------------------------------------------------
# synthetic generation


def _interp_matrix(out_n, in_n):
    mat = np.zeros((out_n, in_n))
    src = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    rows = np.arange(out_n)
    np.add.at(mat, (rows, np.clip(i0, 0, in_n - 1)), 1 - frac)
    np.add.at(mat, (rows, np.clip(i0 + 1, 0, in_n - 1)), frac)
    return mat


def _resize(img, oh, ow):
    """Bilinear resize of (...,h,w)."""
    r = _interp_matrix(oh, img.shape[-2])
    c = _interp_matrix(ow, img.shape[-1])
    return np.einsum("oi,...ij,pj->...op", r, img, c, optimize=True)


def _value_noise(rng, h, w, channels=3):
    """Multi-octave value noise: textured enough to match, not pure static."""
    out = np.zeros((channels, h, w))
    amp = 1.0
    for cells in (4, 8, 16, 32):
        grid = rng.random((channels, cells, cells))
        out += amp * _resize(grid, h, w)
        amp *= 0.55
    out -= out.min()
    out /= max(out.max(), 1e-12)
    return out


def _sample_bilinear(img, py, px):
    """Sample (...,H,W) at float coords; caller keeps coords in bounds."""
    h, w = img.shape[-2], img.shape[-1]
    y0 = np.clip(np.floor(py).astype(np.int64), 0, h - 2)
    x0 = np.clip(np.floor(px).astype(np.int64), 0, w - 2)
    wy = py - y0
    wx = px - x0
    v00 = img[..., y0, x0]
    v01 = img[..., y0, x0 + 1]
    v10 = img[..., y0 + 1, x0]
    v11 = img[..., y0 + 1, x0 + 1]
    return (v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx +
            v10 * wy * (1 - wx) + v11 * wy * wx)


def gen_synthetic(seed, kind, size, max_mag):
    """Deterministic synthetic pair with exact ground-truth flow.

    kind: 'translation' (constant flow), 'affine' (linear field), or 'smooth'
    (low-frequency random field). img2 is a crisp crop of a larger noise
    canvas; img1 is the canvas resampled at p + flow(p), so warping img2 by
    the ground truth reconstructs img1 exactly wherever the sample stays
    inside img2 (the valid mask).
    """
    h, w = size
    if max_mag > min(h, w) / 4:
        raise ValueError("max_mag %g too large for size %dx%d" % (max_mag, h, w))
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    if kind == "translation":
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0.3, 1.0) * max_mag
        flow = np.stack([np.full((h, w), mag * np.cos(ang)),
                         np.full((h, w), mag * np.sin(ang))])
    elif kind == "affine":
        a = rng.uniform(-0.05, 0.05, (2, 2))
        t = rng.uniform(-0.5, 0.5, 2) * max_mag
        pc = np.stack([xx - w / 2, yy - h / 2])
        flow = np.einsum("ij,jhw->ihw", a, pc) + t[:, None, None]
    elif kind == "smooth":
        grid = rng.uniform(-1, 1, (2, 4, 4))
        flow = _resize(grid, h, w)
        flow *= rng.uniform(0.4, 1.0) * max_mag
    else:
        raise ValueError("unknown kind %r" % (kind,))
    peak = np.sqrt(np.square(flow).sum(axis=0)).max()
    if peak > max_mag:
        flow *= max_mag / peak

    margin = int(np.ceil(max_mag)) + 2
    canvas = _value_noise(rng, h + 2 * margin, w + 2 * margin)
    img2 = canvas[:, margin:margin + h, margin:margin + w]
    px = xx + flow[0]
    py = yy + flow[1]
    img1 = _sample_bilinear(canvas, py + margin, px + margin)
    valid = ((px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1))
    return FlowSample(img1=np.ascontiguousarray(img1),
                      img2=np.ascontiguousarray(img2),
                      gt_flow=flow,
                      valid=valid[None].astype(np.float64))


# ---------------------------------------------------------------------------
# metrics


def _check_aligned(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("flow shapes differ: %s vs %s"
                         % (pred.shape, gt.shape))
    mask = np.asarray(valid, dtype=bool).reshape(pred.shape[-2:]) \
        if valid is not None else np.ones(pred.shape[-2:], dtype=bool)
    if not mask.any():
        raise ValueError("empty validity mask")
    return pred, gt, mask


def epe(pred, gt, valid=None):
    """Mean Euclidean endpoint error over valid pixels."""
    pred, gt, mask = _check_aligned(pred, gt, valid)
    err = np.sqrt(np.square(pred - gt).sum(axis=0))
    return float(err[mask].mean())


def fl_all(pred, gt, valid=None):
    """Fraction of valid pixels with error > 3 px and > 5% of the gt norm."""
    pred, gt, mask = _check_aligned(pred, gt, valid)
    err = np.sqrt(np.square(pred - gt).sum(axis=0))
    mag = np.sqrt(np.square(gt).sum(axis=0))
    outlier = (err > 3.0) & (err > 0.05 * mag)
    return float(outlier[mask].mean())


def evaluate(pred, gt, valid=None):
    return EvalResult(epe=epe(pred, gt, valid), fl_all=fl_all(pred, gt, valid))


# ---------------------------------------------------------------------------
# Middlebury .flo interchange


def write_flo(path, flow):
    """flow: (2,h,w); stored as float32 interleaved (u,v), little-endian."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError("expected (2,h,w) flow, got %s" % (flow.shape,))
    _, h, w = flow.shape
    data = flow.transpose(1, 2, 0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(data.tobytes())


def read_flo(path):
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise ValueError("%s: truncated .flo header" % (path,))
        magic, w, h = struct.unpack("<fii", header)
        if magic != struct.unpack("<f", struct.pack("<f", FLO_MAGIC))[0]:
            raise ValueError("%s: bad magic %r, not a .flo file" % (path, magic))
        if w <= 0 or h <= 0:
            raise ValueError("%s: invalid dimensions %dx%d" % (path, w, h))
        payload = fh.read(8 * w * h)
        if len(payload) < 8 * w * h:
            raise ValueError("%s: truncated .flo payload" % (path,))
        data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return data.transpose(2, 0, 1).astype(np.float64)


# ---------------------------------------------------------------------------
# visualization


def _make_colorwheel():
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    ramps = [(ry, 0, 1, True), (yg, 0, 1, False), (gc, 1, 2, True),
             (cb, 1, 2, False), (bm, 2, 0, True), (mr, 2, 0, False)]
    for length, c_full, c_ramp, rising in ramps:
        wheel[col:col + length, c_full] = 1.0
        ramp = np.arange(length) / length
        if rising:
            wheel[col:col + length, c_ramp] = ramp
        else:
            wheel[col:col + length, c_full] = 1 - ramp
            wheel[col:col + length, c_ramp] = 1.0
        col += length
    return wheel


def flow_to_color(flow, max_mag=None):
    """Direction -> hue, magnitude -> saturation; zero flow is white.

    Returns an (H,W,3) uint8 image.
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[0], flow[1]
    rad = np.hypot(u, v)
    if max_mag is None:
        max_mag = max(np.percentile(rad, 99), 1e-9)
    u = u / max_mag
    v = v / max_mag
    rad = np.hypot(u, v)
    wheel = _make_colorwheel()
    ncols = wheel.shape[0]
    ang = np.arctan2(-v, -u) / np.pi
    fk = (ang + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    f = fk - np.floor(fk)
    img = np.zeros(flow.shape[1:] + (3,))
    for c in range(3):
        col0 = wheel[k0, c]
        col1 = wheel[k1, c]
        col = (1 - f) * col0 + f * col1
        inside = rad <= 1
        col = np.where(inside, 1 - rad * (1 - col), col * 0.75)
        img[..., c] = col
    return np.clip(img * 255, 0, 255).astype(np.uint8)


def write_png(path, array):
    """Write a uint8 image: (H,W) grayscale or (H,W,3) RGB."""
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


def read_image(path):
    """Load an image as (3,H,W) float64 in [0,1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return img.transpose(2, 0, 1)
