"""Matching net structure, cost volume contracts, displacement invariance."""

import numpy as np
import pytest

from diclflow import autodiff as ad
from diclflow import matching as m


def test_layer1_affine_param_count():
    # (64 inputs * 3*3 + 1 bias) * 96 outputs, hand-derived
    assert m.MATCHING_NET_SPECS[0].affine_param_count() == 55_392


def test_total_affine_param_count():
    # per-layer: 55392 + 110720 + 147584 + 73792 + 32800 + 289
    net = m.MatchingNet(np.random.default_rng(0))
    assert net.affine_param_count() == 420_577
    # enumeration over actual tensors (conv weights + biases, BN affine)
    conv_affine = sum(p.size for name, p in net.named_params("n").items()
                      if name.endswith(".weight") or name.endswith(".bias"))
    assert conv_affine == 420_577
    bn_affine = sum(p.size for name, p in net.named_params("n").items()
                    if name.endswith(".gamma") or name.endswith(".beta"))
    assert bn_affine == 2 * (96 + 128 + 128 + 64 + 32)


def test_layer_table():
    specs = m.MATCHING_NET_SPECS
    wire = [(s.in_channels, s.out_channels, s.kernel_h, s.stride, s.transposed)
            for s in specs]
    assert wire == [(64, 96, 3, 1, False), (96, 128, 3, 2, False),
                    (128, 128, 3, 1, False), (128, 64, 3, 1, False),
                    (64, 32, 4, 2, True), (32, 1, 3, 1, False)]


@pytest.mark.parametrize("hw", [8, 16, 32])
def test_spatial_size_preserved(hw):
    net = m.MatchingNet(np.random.default_rng(0))
    x = ad.Var(np.random.default_rng(1).standard_normal((2, 64, hw, hw)))
    out = net(x)
    assert out.shape == (2, 1, hw, hw)


def test_rejects_odd_sizes_and_bad_channels():
    net = m.MatchingNet(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        net(ad.Var(rng.standard_normal((1, 64, 7, 8))))
    with pytest.raises(ValueError):
        net(ad.Var(rng.standard_normal((1, 32, 8, 8))))


def test_displacement_range_check():
    m.Displacement(3, -3)
    with pytest.raises(ValueError):
        m.Displacement(4, 0)
    with pytest.raises(ValueError):
        m.Displacement(0, -4)


def test_hypothesis_index_roundtrip():
    assert m.hypothesis_index(m.Displacement(u=-3, v=-3)) == 0
    assert m.hypothesis_index(m.Displacement(u=0, v=0)) == 24
    assert m.hypothesis_index(m.Displacement(u=3, v=3)) == 48
    for n in range(m.NUM_HYPOTHESES):
        assert m.hypothesis_index(m.index_displacement(n)) == n


def test_concat_displaced_layout(rng):
    f1 = ad.Var(rng.standard_normal((32, 6, 6)))
    f2 = ad.Var(rng.standard_normal((32, 6, 6)))
    d = m.Displacement(u=1, v=-2)
    out = m.concat_displaced(f1, f2, d)
    assert out.shape == (64, 6, 6)
    assert np.array_equal(out.value[:32], f1.value)
    assert np.array_equal(out.value[32:], ad.shift2d(f2, 1, -2).value)


def test_cost_volume_shapes(rng):
    net = m.MatchingNet(np.random.default_rng(0))
    f1 = ad.Var(rng.standard_normal((2, 32, 8, 8)) * 0.5)
    f2 = ad.Var(rng.standard_normal((2, 32, 8, 8)) * 0.5)
    vol = m.cost_volume_batch(f1, f2, net)
    assert vol.shape == (2, 49, 8, 8)
    single = m.build_cost_volume(ad.Var(f1.value[0]), ad.Var(f2.value[0]), net)
    assert single.shape == (7, 7, 8, 8)


def test_batched_volume_matches_per_hypothesis_net(rng):
    """Eval-mode volume equals running each hypothesis separately."""
    net = m.MatchingNet(np.random.default_rng(3))
    f1 = ad.Var(rng.standard_normal((1, 32, 8, 8)) * 0.5)
    f2 = ad.Var(rng.standard_normal((1, 32, 8, 8)) * 0.5)
    vol = m.cost_volume_batch(f1, f2, net, training=False).value
    for n in [0, 7, 24, 31, 48]:
        d = m.index_displacement(n)
        f_u = m.concat_displaced(f1, f2, d)
        cost = m.matching_cost(f_u, net, training=False).value
        assert np.allclose(vol[0, n], cost[0, 0], atol=1e-12)


def test_displacement_invariance(rng):
    """The same feature pair scores identically whichever hypothesis slot it
    occupies: shared weights make the cost displacement-invariant."""
    net = m.MatchingNet(np.random.default_rng(5))
    f1 = ad.Var(rng.standard_normal((1, 32, 8, 8)) * 0.5)
    f2 = ad.Var(rng.standard_normal((1, 32, 8, 8)) * 0.5)
    base = np.concatenate([f1.value, f2.value], axis=1)
    ref = net(ad.Var(base), training=False).value
    # feed the identical concatenated tensor through any "slot": identical out
    for _ in range(3):
        again = net(ad.Var(base), training=False).value
        assert np.array_equal(again, ref)
    # a shifted pair scores the same as pre-shifting by hand
    d = m.Displacement(u=2, v=-1)
    via_concat = net(m.concat_displaced(f1, f2, d), training=False).value
    hand = np.concatenate([f1.value, ad.shift2d(f2, 2, -1).value], axis=1)
    assert np.allclose(net(ad.Var(hand), training=False).value, via_concat,
                       atol=1e-12)


def test_build_cost_volume_orientation(rng):
    """Index (i, j) of the (7,7,h,w) volume is displacement (v=i-3, u=j-3)."""
    net = m.MatchingNet(np.random.default_rng(7))
    f1 = ad.Var(rng.standard_normal((32, 8, 8)) * 0.5)
    f2 = ad.Var(rng.standard_normal((32, 8, 8)) * 0.5)
    vol = m.build_cost_volume(f1, f2, net).value
    d = m.Displacement(u=2, v=-3)
    cost = m.matching_cost(m.concat_displaced(f1, f2, d), net).value
    assert np.allclose(vol[d.v + 3, d.u + 3], cost[0], atol=1e-12)
