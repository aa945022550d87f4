import csv

import numpy as np
import pytest

from encoderlab.autodiff import Tensor, kernels, no_grad
from encoderlab.autodiff import functional as F
from encoderlab.encoders import (ActorCritic, EncoderSpec, EncoderSpecError, QNetwork, build_encoder,
                                 lr_for_tau, summarize)


def _rows(summary):
    out = []
    for r in summary.rows:
        fmt = lambda s: "[" + ", ".join(str(v) for v in s) + "]"  # noqa: E731
        out.append([str(r.depth), r.name, fmt(r.input_shape), fmt(r.output_shape),
                    str(r.param_count) if r.is_leaf else "--",
                    fmt(r.kernel) if r.kernel else "--",
                    f"{r.param_pct:.2f}%" if r.param_pct is not None else "--",
                    str(r.multi_adds) if r.multi_adds is not None else "--"])
    return out


def _golden(path):
    with open(path) as fh:
        return [row for row in csv.reader(fh)][1:]


@pytest.mark.parametrize("kind,fname,total,madds,linear_pct", [
    ("impala", "impala_tau2_layers.csv", 1_441_680, 118.26, "72.75%"),
    ("impoola", "impoola_tau2_layers.csv", 409_488, 117.23, "4.06%"),
])
def test_summary_matches_reference_layer_table(data_dir, kind, fname, total, madds, linear_pct):
    s = summarize(ActorCritic(EncoderSpec.parse(kind, 2), 15))
    golden = _golden(data_dir / fname)
    got = _rows(s)
    assert len(got) == len(golden)
    for g, e in zip(got, golden):
        assert g == e
    assert s.total_params == total
    assert round(s.total_multi_adds / 1e6, 2) == madds
    assert f"{s.leaf('Linear')[0].param_pct:.2f}%" == linear_pct


@pytest.mark.parametrize("kind,tau,total", [
    ("impala", 1, 626_256), ("impoola", 1, 110_160), ("impala", 3, 2_450_640),
])
def test_scaled_totals(kind, tau, total):
    assert summarize(ActorCritic(EncoderSpec.parse(kind, tau), 15)).total_params == total


def test_impala_tau1_linear_share():
    s = summarize(ActorCritic(EncoderSpec.impala(1), 15))
    assert f"{s.leaf('Linear')[0].param_pct:.2f}" == "83.76"


def test_summary_counts_match_live_parameters():
    for name in ("impala", "impoola", "impala-avgpool2x2", "impala-maxpool1x1", "impala-depthwise",
                 "impala-4seq", "nature", "nature-gap"):
        net = ActorCritic(EncoderSpec.parse(name, 1), 9)
        assert summarize(net).total_params == net.num_params(), name


def test_nature_counts():
    # base {16,32,32} scaled by two
    assert ActorCritic(EncoderSpec.parse("nature", 2), 15).num_params() == 342_448
    assert ActorCritic(EncoderSpec.parse("nature-gap", 2), 15).num_params() == 96_688


@pytest.mark.parametrize("name", ["impala", "impoola", "impala-avgpool2x2", "impala-maxpool1x1",
                                  "impala-depthwise", "impala-4seq", "nature", "nature-gap"])
def test_forward_shapes(name):
    net = ActorCritic(EncoderSpec.parse(name, 1), 9, seed=3)
    x = Tensor(np.random.default_rng(0).random((2, 3, 64, 64), dtype=np.float32))
    with no_grad():
        logits, value = net(x)
    assert logits.shape == (2, 9) and value.shape == (2,)
    q = QNetwork(EncoderSpec.parse(name, 1), 9)
    with no_grad():
        assert q(x).shape == (2, 9)


def test_gap_output_independent_of_spatial_size():
    enc = build_encoder(EncoderSpec(kind="impala", tail="gap", input_shape=(3, 96, 96)), seed=0)
    with no_grad():
        z = enc(Tensor(np.zeros((1, 3, 96, 96), dtype=np.float32)))
    assert z.shape == (1, 256)


def test_same_seed_same_weights_and_different_seed_differs():
    a = ActorCritic(EncoderSpec.impoola(1), 9, seed=1).state_dict()
    b = ActorCritic(EncoderSpec.impoola(1), 9, seed=1).state_dict()
    c = ActorCritic(EncoderSpec.impoola(1), 9, seed=2).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_init_gains_and_zero_bias():
    net = ActorCritic(EncoderSpec.impoola(1), 9, seed=0)
    w = net.actor.weight.data.astype(np.float64)
    # orthogonal rows scaled by the gain
    np.testing.assert_allclose(w @ w.T, 0.01 ** 2 * np.eye(9), atol=1e-9)
    c = net.critic.weight.data.astype(np.float64)
    np.testing.assert_allclose(np.linalg.norm(c), 1.0, rtol=1e-6)
    assert all(not p.data.any() for name, p in net.named_parameters() if name.endswith("bias"))


def test_lr_scaling_rule():
    assert lr_for_tau(3.5e-4, 2) == pytest.approx(3.5e-4)
    assert lr_for_tau(3.5e-4, 1) == pytest.approx(1.75e-4)
    assert lr_for_tau(1e-4, 4) == pytest.approx(2e-4)


@pytest.mark.parametrize("bad", [
    dict(kind="resnet"), dict(tail="spp"), dict(width_scale=0), dict(kind="nature", tail="depthwise"),
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(EncoderSpecError):
        EncoderSpec(**{**dict(kind="impala", tail="flatten"), **bad}).validate()


def test_unknown_alias():
    with pytest.raises(EncoderSpecError):
        EncoderSpec.parse("alexnet")


@pytest.mark.skipif(not kernels.torch_available(), reason="torch not installed")
def test_torch_backend_matches_numpy():
    net = ActorCritic(EncoderSpec.impala(1), 9, seed=0)
    x = Tensor(np.random.default_rng(0).random((3, 3, 64, 64), dtype=np.float32))
    outs = {}
    for be in kernels.BACKENDS:
        with kernels.use_backend(be):
            net_params = net.parameters()
            for p in net_params:
                p.zero_grad()
            logits, value = net(x)
            (F.sum(logits) + F.sum(value)).backward()
            outs[be] = (logits.data.copy(), [p.grad.copy() for p in net_params])
    np.testing.assert_allclose(outs["numpy"][0], outs["torch"][0], rtol=1e-4, atol=1e-5)
    for g1, g2 in zip(outs["numpy"][1], outs["torch"][1]):
        np.testing.assert_allclose(g1, g2, rtol=1e-3, atol=1e-4)
