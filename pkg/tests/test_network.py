import math

import numpy as np
import pytest
import torch

from vrfb.network import (
    ModifiedFNN, CompositeNet, init_weights, swish, save_model, load_model,
    POTENTIAL_RANGES,
)
from vrfb.physics import CellParameters, Side, Stage

P = CellParameters()


def numpy_forward(net: ModifiedFNN, x: np.ndarray) -> np.ndarray:
    """Independent plain-numpy evaluation of the gated forward recursion."""
    def f(v):
        return v / (1.0 + np.exp(-v))

    def lin(layer, v):
        W = layer.weight.detach().numpy()
        b = layer.bias.detach().numpy()
        return v @ W.T + b

    u = f(lin(net.enc_u, x))
    v = f(lin(net.enc_v, x))
    y = f(lin(net.hidden[0], x))
    for layer in net.hidden[1:]:
        z = f(lin(layer, y))
        y = (1.0 - z) * u + z * v
    return lin(net.head, y)


def test_forward_matches_independent_recursion():
    net = init_weights(ModifiedFNN(3, 3, width=16, depth=4), seed=11)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    got = net(torch.tensor(x)).detach().numpy()
    want = numpy_forward(net, x)
    assert np.max(np.abs(got - want)) < 1e-12


def test_forward_zero_weights_and_base_case():
    net = ModifiedFNN(3, 3, width=8, depth=3)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    out = net(torch.zeros(5, 3, dtype=torch.float64))
    assert torch.all(out == 0.0)

    # depth 1: no blending, plain two-layer map
    net1 = init_weights(ModifiedFNN(3, 3, width=8, depth=1), seed=3)
    x = torch.randn(7, 3, dtype=torch.float64)
    expect = net1.head(swish(net1.hidden[0](x)))
    assert torch.allclose(net1(x), expect, atol=0, rtol=0)


def test_init_reproducible_and_xavier():
    a = init_weights(ModifiedFNN(3, 3, 50, 6), seed=42)
    b = init_weights(ModifiedFNN(3, 3, 50, 6), seed=42)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = init_weights(ModifiedFNN(3, 3, 50, 6), seed=43)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))
    for name, p in a.named_parameters():
        if name.endswith("bias"):
            assert torch.all(p == 0.0)
    w = a.hidden[2].weight.detach().numpy()  # 50x50 layer
    var = w.var()
    expect = 2.0 / (50 + 50)  # uniform(-b, b) variance b^2/3 with b^2 = 6/(fi+fo)
    assert abs(var - expect) / expect < 0.2


def test_normalize_input_endpoints():
    net = CompositeNet(P, Stage.CHARGING, width=8, depth=2, seed=0)
    t = lambda v: torch.tensor([v], dtype=torch.float64)
    xn, yn, sn = net.normalize_input(Side.NEGATIVE, t(-P.L), t(P.H), t(0.45))
    assert xn.item() == pytest.approx(-1.0)
    assert yn.item() == pytest.approx(1.0)
    assert sn.item() == pytest.approx(0.0)
    xn, _, _ = net.normalize_input(Side.POSITIVE, t(P.L), t(0.0), t(0.1))
    assert xn.item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        net.normalize_input(Side.NEGATIVE, t(0.5 * P.L), t(0.0), t(0.45))
    with pytest.raises(ValueError):
        net.normalize_input(Side.NEGATIVE, t(-0.5 * P.L), t(2 * P.H), t(0.45))


@pytest.mark.parametrize("stage", [Stage.CHARGING, Stage.DISCHARGING])
def test_transform_output_ranges(stage):
    net = CompositeNet(P, stage, width=8, depth=2, seed=0)
    soc = torch.tensor(0.45, dtype=torch.float64)
    rng = np.random.default_rng(5)
    # concentrations are sine-bounded for arbitrary raw values; the affine
    # potential maps are only onto their ranges for raw values in [-1, 1]
    raw = np.empty((500, 3))
    raw[:, 0] = rng.uniform(-50, 50, 500)
    raw[:, 1:] = rng.uniform(-1, 1, (500, 2))
    raw = torch.tensor(raw)
    for side in Side:
        c, phi_l, phi_s = net.transform_outputs(side, raw, soc)
        if stage is Stage.CHARGING:
            lo, hi = (P.c0 * 0.45, P.c0) if side is Side.NEGATIVE else (0.0, P.c0 * 0.55)
        else:
            lo, hi = (0.0, P.c0 * 0.45) if side is Side.NEGATIVE else (P.c0 * 0.55, P.c0)
        assert torch.all(c >= lo - 1e-9) and torch.all(c <= hi + 1e-9)
        key_l = "phil_neg" if side is Side.NEGATIVE else "phil_pos"
        key_s = "phis_neg" if side is Side.NEGATIVE else "phis_pos"
        for phi, key in ((phi_l, key_l), (phi_s, key_s)):
            lo_p, hi_p = POTENTIAL_RANGES[stage][key]
            assert torch.all(phi >= lo_p - 1e-9) and torch.all(phi <= hi_p + 1e-9)


def test_transform_output_endpoints():
    net = CompositeNet(P, Stage.CHARGING, width=8, depth=2, seed=0)
    soc = torch.tensor(0.45, dtype=torch.float64)
    raw_hi = torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64)
    raw_lo = torch.tensor([[-1.0, 0.0, -1.0]], dtype=torch.float64)
    c, _, ps = net.transform_outputs(Side.NEGATIVE, raw_hi, soc)
    assert c.item() == pytest.approx(P.c0 * 0.45, rel=1e-12)  # inlet value
    c, _, _ = net.transform_outputs(Side.NEGATIVE, raw_lo, soc)
    assert c.item() == pytest.approx(P.c0, rel=1e-12)
    # positive electrode potential while charging: hat=+1 -> 1.40, hat=-1 -> 2.20
    _, _, ps = net.transform_outputs(Side.POSITIVE, raw_hi, soc)
    assert ps.item() == pytest.approx(1.40, rel=1e-12)
    _, _, ps = net.transform_outputs(Side.POSITIVE, raw_lo, soc)
    assert ps.item() == pytest.approx(2.20, rel=1e-12)


def test_forward_physical_finite_and_deterministic():
    net = CompositeNet(P, Stage.DISCHARGING, width=8, depth=2, seed=9)
    rng = np.random.default_rng(1)
    x = torch.tensor(rng.uniform(0, P.L, 50))
    y = torch.tensor(rng.uniform(0, P.H, 50))
    soc = torch.tensor(rng.uniform(P.soc_min, P.soc_max, 50))
    a = net.forward_physical(Side.POSITIVE, x, y, soc)
    b = net.forward_physical(Side.POSITIVE, x, y, soc)
    for ta, tb in zip(a, b):
        assert torch.equal(ta, tb)
        assert torch.all(torch.isfinite(ta))


def test_checkpoint_round_trip(tmp_path):
    net = CompositeNet(P, Stage.CHARGING, width=8, depth=3, seed=5)
    path = tmp_path / "model.vrfb"
    save_model(net, path, {"variant": "pinn"})
    loaded, meta = load_model(path)
    assert meta == {"variant": "pinn"}
    assert loaded.stage is Stage.CHARGING
    for pa, pb in zip(net.parameters(), loaded.parameters()):
        assert torch.equal(pa, pb)
    x = (torch.tensor([0.3 * P.L], dtype=torch.float64),
         torch.tensor([0.5 * P.H], dtype=torch.float64),
         torch.tensor([0.4], dtype=torch.float64))
    for ta, tb in zip(net.forward_physical(Side.POSITIVE, *x),
                      loaded.forward_physical(Side.POSITIVE, *x)):
        assert torch.equal(ta, tb)
