"""Toy training loop on synthetic data, with held-out evaluation."""

import csv
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .data import epe, fl_all, gen_synthetic
from .flowhead import d_peak
from .heads import HEAD_KINDS
from .model import FlowModel, save_checkpoint, _block_min


@dataclass
class RunConfig:
    seed: int = 0
    size: tuple = (64, 64)
    head: str = "dicl"
    dap: bool = True
    context: bool = True
    lr: float = 1e-3
    lr_decay: float = 0.3
    lr_milestones: tuple = (0.5, 0.8)
    ema: float = 0.99
    iters: int = 500
    batch_size: int = 2
    max_mag: float = 8.0
    kinds: tuple = ("translation", "smooth")
    heldout_kinds: tuple = None     # defaults to `kinds`
    pool_size: int = 32
    heldout_size: int = 8
    eval_every: int = 50
    loss_weights: tuple = (1.0, 0.75, 0.5, 0.5, 0.5)
    out_dir: str = "runs"

    def __post_init__(self):
        if len(self.loss_weights) != 5:
            raise ValueError("loss_weights must have 5 entries")
        h, w = self.size
        if h <= 0 or w <= 0:
            raise ValueError("invalid size %s" % (self.size,))
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if not 0.0 <= self.ema < 1.0:
            raise ValueError("ema decay must be in [0, 1)")
        if self.heldout_kinds is None:
            self.heldout_kinds = tuple(self.kinds)


def make_dataset(seed, kinds, count, size, max_mag):
    samples = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        samples.append(gen_synthetic(seed * 100003 + i, kind, size, max_mag))
    return samples


def evaluate_model(model, samples, chunk=4):
    """Symmetric-inference eval in small chunks; returns (mean epe, mean
    fl_all, median d_peak over valid finest-level pixels)."""
    epes = []
    fls = []
    all_gaps = []
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        img1 = np.stack([s.img1 for s in part])
        img2 = np.stack([s.img2 for s in part])
        full, out = model.infer_flow(img1, img2)
        for i, s in enumerate(part):
            epes.append(epe(full[i], s.gt_flow, s.valid))
            fls.append(fl_all(full[i], s.gt_flow, s.valid))
        gaps = d_peak(out["probs"][0].value)         # finest level
        valid = np.stack([s.valid for s in part])
        mask = _block_min(valid, 4) > 0.5
        all_gaps.append(gaps[mask])
    gaps = np.concatenate(all_gaps)
    med = float(np.median(gaps)) if gaps.size else float("nan")
    return float(np.mean(epes)), float(np.mean(fls)), med


def train(config, log=None):
    """Deterministic toy training; returns a summary dict.

    Writes <out_dir>/loss_curve.csv plus best/final checkpoints; evaluation
    and checkpoints use an exponential moving average of the weights. On NaN
    loss the best checkpoint so far is kept and the failure is reported.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    pool = make_dataset(config.seed, config.kinds, config.pool_size,
                        config.size, config.max_mag)
    heldout = make_dataset(config.seed + 7919, config.heldout_kinds,
                           config.heldout_size, config.size, config.max_mag)
    model = FlowModel(head=config.head, dap=config.dap,
                      context=config.context, seed=config.seed)
    params = model.parameters()
    opt = ad.Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)

    # exponential moving average of the weights; evaluation and checkpoints
    # use the averaged weights, which damps per-pixel readout noise from the
    # last few stochastic updates (ema=0 disables averaging)
    ema = [p.value.copy() for p in params]

    def with_ema(fn):
        saved = [p.value for p in params]
        for p, e in zip(params, ema):
            p.value = e
        try:
            return fn()
        finally:
            for p, s in zip(params, saved):
                p.value = s

    rows = []
    best_epe = float("inf")
    best_path = os.path.join(config.out_dir, "best.npz")
    final_path = os.path.join(config.out_dir, "final.npz")
    curve_path = os.path.join(config.out_dir, "loss_curve.csv")
    diverged = None
    # step schedule: drop the learning rate partway through the budget so the
    # held-out error settles instead of oscillating late in training
    milestones = {int(config.iters * f) for f in config.lr_milestones}
    for it in range(1, config.iters + 1):
        if it in milestones:
            opt.lr *= config.lr_decay
        idx = rng.choice(len(pool), size=min(config.batch_size, len(pool)),
                         replace=False)
        batch = [pool[i] for i in idx]
        try:
            loss = model.train_step(batch, opt)
        except FloatingPointError as exc:
            diverged = "iteration %d: %s" % (it, exc)
            break
        for p, e in zip(params, ema):
            e *= config.ema
            e += (1.0 - config.ema) * p.value
        if it % config.eval_every == 0 or it == config.iters:
            held_epe, held_fl, med = with_ema(
                lambda: evaluate_model(model, heldout))
            rows.append((it, loss, held_epe, held_fl, med))
            if held_epe < best_epe:
                best_epe = held_epe
                with_ema(lambda: save_checkpoint(
                    model, best_path,
                    extra={"iteration": it, "heldout_epe": held_epe}))
            if log:
                log("iter %d loss %.4f heldout epe %.3f" % (it, loss, held_epe))
        else:
            rows.append((it, loss, "", "", ""))

    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "heldout_epe", "heldout_fl_all",
                         "heldout_dpeak_median"])
        for it, loss, e, f, m in rows:
            writer.writerow([it, repr(loss), repr(e) if e != "" else "",
                             repr(f) if f != "" else "",
                             repr(m) if m != "" else ""])
    if diverged is None:
        with_ema(lambda: save_checkpoint(model, final_path,
                                         extra={"iteration": config.iters}))
    return {"model": model, "best_epe": best_epe, "curve": curve_path,
            "best_checkpoint": best_path, "final_checkpoint": final_path,
            "diverged": diverged, "heldout": heldout}


def run_ablation(config, heads=HEAD_KINDS, log=None):
    """Train every cost head with an identical seed/budget; returns rows of
    (head, best heldout epe or nan on divergence)."""
    rows = []
    for head in heads:
        cfg = RunConfig(**{**asdict(config), "head": head,
                           "out_dir": os.path.join(config.out_dir, head)})
        if log:
            log("training head %s" % head)
        result = train(cfg, log=log)
        value = float("nan") if result["diverged"] else result["best_epe"]
        rows.append((head, value, result["diverged"] or ""))
    return rows


def write_ablation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "heldout_epe", "note"])
        for head, value, note in rows:
            writer.writerow([head, repr(value), note])
