"""Analytical accounting: per-layer parameter/memory formulas, d_peak
histograms, and DAP kernel dumps.

The parameter and memory columns are symbolic reproductions of the per-layer
comparison between joint 4D convolution, separable multi-channel filtering,
and per-displacement 2D cost learning; nothing here is profiler-measured.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .data import write_png
from .matching import NUM_HYPOTHESES, WINDOW

SCHEME_KINDS = ("conv4d", "vcn_separable", "dicl")


@dataclass
class CostingScheme:
    kind: str
    k: int            # channel count of the 5D feature volume
    u: int = WINDOW
    v: int = WINDOW
    h: int = 64       # level resolution
    w: int = 96

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError("unknown scheme kind %r; choose from %s"
                             % (self.kind, "/".join(SCHEME_KINDS)))
        if min(self.k, self.u, self.v, self.h, self.w) <= 0:
            raise ValueError("all scheme dimensions must be positive")


def per_layer_params(scheme):
    """Kernel weights of one layer: 81K^2 (4D conv), 18K^2 (separable), 9K."""
    k = scheme.k
    if scheme.kind == "conv4d":
        return 81 * k * k
    if scheme.kind == "vcn_separable":
        return 18 * k * k
    return 9 * k


def inference_memory(scheme):
    """Live activation elements of one layer at inference time."""
    base = scheme.k * scheme.h * scheme.w
    if scheme.kind == "dicl":
        return base
    return base * scheme.u * scheme.v


@dataclass
class HistogramSpec:
    bin_width: float = 0.001
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")


def dpeak_histogram(values, spec=None):
    """Bin peak-gap values over [0,1]; returns (edges, counts, median)."""
    spec = spec or HistogramSpec()
    if isinstance(values, (list, tuple)):
        parts = [np.asarray(v, dtype=np.float64).ravel() for v in values]
        vals = np.concatenate(parts) if parts else np.array([])
    else:
        vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("no values to histogram")
    nbins = int(round((spec.hi - spec.lo) / spec.bin_width))
    edges = spec.lo + spec.bin_width * np.arange(nbins + 1)
    counts, _ = np.histogram(vals, bins=edges)
    return edges, counts, float(np.median(vals))


def write_histogram_csv(path, edges, counts):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "count"])
        for e, c in zip(edges[:-1], counts):
            writer.writerow(["%.6f" % e, int(c)])


def dump_dap_kernels(dap, out_dir):
    """Write each DAP matrix row as a 7x7 grayscale PNG plus a raw CSV.

    Each row maps the 49 input costs to one output hypothesis; per-kernel
    min-max normalization makes structure visible regardless of scale.
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    w = dap.weight.value
    if w.shape != (NUM_HYPOTHESES, NUM_HYPOTHESES):
        raise ValueError("DAP matrix shape %s, expected (%d,%d)"
                         % (w.shape, NUM_HYPOTHESES, NUM_HYPOTHESES))
    paths = []
    for n in range(NUM_HYPOTHESES):
        kernel = w[n].reshape(WINDOW, WINDOW)
        lo, hi = kernel.min(), kernel.max()
        norm = (kernel - lo) / (hi - lo) if hi > lo else np.zeros_like(kernel)
        img = np.round(norm * 255).astype(np.uint8)
        path = os.path.join(out_dir, "kernel_%02d.png" % n)
        write_png(path, img)
        paths.append(path)
    csv_path = os.path.join(out_dir, "dap_kernels.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kernel"] + ["w%d" % j for j in range(NUM_HYPOTHESES)])
        for n in range(NUM_HYPOTHESES):
            writer.writerow([n] + [repr(float(x)) for x in w[n]])
    return paths, csv_path


def read_dap_kernel_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    mat = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return mat


def bench_report(k, u=WINDOW, v=WINDOW, h=64, w=96):
    """Rows of (kind, params, param_ratio, memory, memory_ratio)."""
    rows = []
    base_p = per_layer_params(CostingScheme("dicl", k, u, v, h, w))
    base_m = inference_memory(CostingScheme("dicl", k, u, v, h, w))
    for kind in SCHEME_KINDS:
        scheme = CostingScheme(kind, k, u, v, h, w)
        p = per_layer_params(scheme)
        m = inference_memory(scheme)
        rows.append({"kind": kind, "params": p,
                     "param_ratio": p // base_p,
                     "memory": m, "memory_ratio": m // base_m})
    return rows
