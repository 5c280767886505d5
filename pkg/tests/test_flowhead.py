"""DAP reweighting and soft-argmin readout contracts."""

import numpy as np
import pytest

from diclflow import autodiff as ad
from diclflow.flowhead import (DapParams, d_peak, dap_reweight, soft_argmin2d)
from diclflow.matching import NUM_HYPOTHESES, WINDOW, hypothesis_index, \
    Displacement


def test_identity_dap_is_bit_exact_noop(rng):
    vol = ad.Var(rng.standard_normal((2, NUM_HYPOTHESES, 4, 4)))
    out = dap_reweight(vol, DapParams())
    assert np.array_equal(out.value, vol.value)


def test_dap_one_hot_kernels_select_rows(rng):
    vol = ad.Var(rng.standard_normal((1, NUM_HYPOTHESES, 3, 3)))
    for src in [0, 17, 48]:
        dap = DapParams()
        w = np.zeros((NUM_HYPOTHESES, NUM_HYPOTHESES))
        w[:, src] = 1.0          # every output reads hypothesis `src`
        dap.weight = ad.Var(w)
        out = dap_reweight(vol, dap).value
        for n in range(NUM_HYPOTHESES):
            assert np.allclose(out[0, n], vol.value[0, src], atol=1e-14)


def test_dap_matches_matvec_oracle(rng):
    vol = ad.Var(rng.standard_normal((2, NUM_HYPOTHESES, 5, 4)))
    dap = DapParams()
    dap.weight = ad.Var(rng.standard_normal((NUM_HYPOTHESES, NUM_HYPOTHESES)))
    dap.bias = ad.Var(rng.standard_normal(NUM_HYPOTHESES))
    out = dap_reweight(vol, dap).value
    for b in range(2):
        for y in range(5):
            for x in range(4):
                want = dap.weight.value @ vol.value[b, :, y, x] + dap.bias.value
                assert np.max(np.abs(out[b, :, y, x] - want)) < 1e-12


def test_dap_accepts_77_layout(rng):
    vol = ad.Var(rng.standard_normal((WINDOW, WINDOW, 4, 4)))
    out = dap_reweight(vol, DapParams())
    assert out.shape == (WINDOW, WINDOW, 4, 4)
    assert np.array_equal(out.value, vol.value)


def test_soft_argmin_uniform_gives_zero():
    vol = ad.Var(np.zeros((NUM_HYPOTHESES, 4, 4)))
    flow, probs = soft_argmin2d(vol)
    assert flow.shape == (2, 4, 4)
    assert np.max(np.abs(flow.value)) < 1e-12
    assert np.allclose(probs.value.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("u,v", [(-3, -3), (2, -1), (0, 3), (3, 3)])
def test_soft_argmin_dominant_hypothesis(u, v):
    vol = np.zeros((NUM_HYPOTHESES, 2, 2))
    n = hypothesis_index(Displacement(u=u, v=v))
    vol[n] = -25.0              # cost gap >= 20 against everything else
    flow, _ = soft_argmin2d(ad.Var(vol))
    assert np.max(np.abs(flow.value[0] - u)) < 1e-6
    assert np.max(np.abs(flow.value[1] - v)) < 1e-6


def test_soft_argmin_range_bounded(rng):
    vol = ad.Var(rng.standard_normal((NUM_HYPOTHESES, 6, 6)) * 30)
    flow, _ = soft_argmin2d(vol)
    assert np.all(flow.value >= -3.0 - 1e-12)
    assert np.all(flow.value <= 3.0 + 1e-12)


def test_soft_argmin_bimodal_midpoint():
    vol = np.full((NUM_HYPOTHESES, 1, 1), 30.0)
    a = hypothesis_index(Displacement(u=-2, v=1))
    b = hypothesis_index(Displacement(u=2, v=-3))
    vol[a] = 0.0
    vol[b] = 0.0
    flow, _ = soft_argmin2d(ad.Var(vol))
    assert abs(flow.value[0, 0, 0] - 0.0) < 1e-6   # mean of -2 and 2
    assert abs(flow.value[1, 0, 0] - (-1.0)) < 1e-6  # mean of 1 and -3


def test_soft_argmin_batched_layout(rng):
    vol = ad.Var(rng.standard_normal((3, NUM_HYPOTHESES, 4, 5)))
    flow, probs = soft_argmin2d(vol)
    assert flow.shape == (3, 2, 4, 5)
    assert probs.shape == (3, NUM_HYPOTHESES, 4, 5)
    assert np.allclose(probs.value.sum(axis=1), 1.0, atol=1e-12)


def test_d_peak_one_hot_and_uniform():
    p = np.zeros((NUM_HYPOTHESES, 2, 2))
    p[13] = 1.0
    assert np.allclose(d_peak(p), 1.0, atol=1e-12)
    u = np.full((NUM_HYPOTHESES, 2, 2), 1.0 / NUM_HYPOTHESES)
    assert np.allclose(d_peak(u), 0.0, atol=1e-12)


def test_d_peak_two_leaders():
    p = np.full((NUM_HYPOTHESES, 1, 1), (1.0 - 0.65) / 47)
    p[4] = 0.35
    p[40] = 0.30
    gap = d_peak(p)
    assert abs(gap[0, 0, 0] - 0.05) < 1e-12


def test_d_peak_accepts_all_layouts(rng):
    base = rng.random((NUM_HYPOTHESES, 3, 3))
    base /= base.sum(axis=0, keepdims=True)
    g0 = d_peak(base)
    g1 = d_peak(base.reshape(WINDOW, WINDOW, 3, 3))
    g2 = d_peak(base[None])
    assert np.allclose(g0[0], g1[0], atol=1e-15)
    assert np.allclose(g0[0], g2[0, 0], atol=1e-15)
