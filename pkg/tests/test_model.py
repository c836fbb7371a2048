import math

import numpy as np
import pytest

from harnet import nn
from harnet.errors import CheckpointError, ConfigError, ContractError, FusionContractError, ShapeError
from harnet.model import HarNet, HarNetConfig, check_config_match, param_count

from conftest import TINY

KSUM = sum(range(1, 34, 4))  # 1 + 5 + ... + 33 = 153


def hand_count(conv_maps_in_first, flatten, fusion):
    f, maps = 4, 36
    conv = (f * conv_maps_in_first * KSUM + maps) + 3 * (f * maps * KSUM + maps)
    fc1 = (flatten + fusion) * 2048 + 2048
    return conv + fc1 + (2048 * 64 + 64) + (64 * 6 + 6)


def test_hand_computed_parameter_counts():
    assert hand_count(1, 2592, 561) == 6_657_770
    assert hand_count(1, 2592, 0) == 5_508_842
    assert hand_count(9, 288, 561) == 1_944_074


@pytest.mark.parametrize(
    "kwargs,expected",
    [({}, 6_657_770), ({"fusion_mode": "none"}, 5_508_842), ({"conv_mode": "conventional"}, 1_944_074)],
)
def test_builder_parameter_counts(kwargs, expected):
    cfg = HarNetConfig(**kwargs)
    assert param_count(cfg) == expected
    assert HarNet.build(cfg, 0).parameter_count == expected


def test_shape_ledger_defaults():
    cfg = HarNetConfig()
    assert cfg.stage_lengths() == [128, 64, 32, 16, 8]
    ledger = cfg.shape_ledger()
    assert [r["maps_in"] for r in ledger] == [1, 36, 36, 36]
    assert all(r["maps_out"] == 36 and r["streams"] == 9 for r in ledger)
    assert cfg.flatten_length == 9 * 9 * 4 * 8 == 2592
    assert cfg.fc1_inputs == 3153
    assert HarNetConfig(fusion_mode="none").fc1_inputs == 2592
    conv = HarNetConfig(conv_mode="conventional")
    assert conv.shape_ledger()[0]["maps_in"] == 9 and conv.flatten_length == 288


def test_separable_weights_have_no_stream_axis():
    m = HarNet.build(HarNetConfig(), 0)
    assert m.params["stage1/k33/w"].shape == (4, 1, 33)
    assert m.params["stage2/k5/w"].shape == (4, 36, 5)


@pytest.mark.parametrize(
    "kwargs",
    [dict(kernel_sizes=(1, 4)), dict(kernel_sizes=(3, 3)), dict(kernel_sizes=()), dict(stages=0),
     dict(conv_mode="dilated"), dict(fusion_mode="pca"), dict(pool_window=0),
     dict(pool_padding="valid", pool_window=11, stages=4, length=40)],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        HarNetConfig(**kwargs)


def test_init_is_seeded_and_biases_zero():
    a, b = HarNet.build(HarNetConfig(**TINY), 5), HarNet.build(HarNetConfig(**TINY), 5)
    c = HarNet.build(HarNetConfig(**TINY), 6)
    assert all(np.array_equal(a.params[k].value, b.params[k].value) for k in a.params)
    assert not np.array_equal(a.params["fc1/w"].value, c.params["fc1/w"].value)
    assert all(not p.value.any() for k, p in a.params.items() if k.endswith("/b"))


def _inputs(cfg, batch, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((batch, cfg.streams, 1, cfg.length)),
            rng.uniform(-1, 1, (batch, cfg.fusion_width)))


def test_untrained_logits_are_near_uniform():
    cfg = HarNetConfig()
    m = HarNet.build(cfg, 0)
    x, f = _inputs(cfg, 16)
    loss = m.loss(x, f, np.arange(16) % 6)
    assert abs(loss - math.log(6)) < 0.1
    _, probs = m.predict(x, f)
    assert probs.shape == (16, 6) and np.all(np.abs(probs.sum(axis=1) - 1) < 1e-9)


def test_stream_isolation_through_all_stages():
    cfg = HarNetConfig()
    m = HarNet.build(cfg, 1)
    x, _ = _inputs(cfg, 2)
    base = m.stage_outputs(x)
    for j in (0, 4, 8):
        x2 = x.copy()
        x2[:, j] = 0.0
        outs = m.stage_outputs(x2)
        assert len(outs) == 4
        for s, (o, b) in enumerate(zip(outs, base)):
            others = [i for i in range(9) if i != j]
            assert np.array_equal(o[:, others], b[:, others]), f"stage {s + 1} stream {j}"
            assert not np.array_equal(o[:, j], b[:, j])


def test_stream_permutation_equivariance():
    cfg = HarNetConfig()
    m = HarNet.build(cfg, 2)
    x, _ = _inputs(cfg, 2)
    perm = np.random.default_rng(3).permutation(9)
    base = m.stage_outputs(x)
    permuted = m.stage_outputs(x[:, perm])
    for o, b in zip(permuted, base):
        assert np.array_equal(o, b[:, perm])


def test_batch_partition_invariance_and_duplicates():
    cfg = HarNetConfig()
    m = HarNet.build(cfg, 4)
    x, f = _inputs(cfg, 32)
    whole = m.forward(x, f)
    halves = np.concatenate([m.forward(x[:16], f[:16]), m.forward(x[16:], f[16:])])
    odd = np.concatenate([m.forward(x[:5], f[:5]), m.forward(x[5:], f[5:])])
    assert np.array_equal(whole, halves) and np.array_equal(whole, odd)
    dup = m.forward(np.stack([x[3], x[3], x[7]]), np.stack([f[3], f[3], f[7]]))
    assert np.array_equal(dup[0], dup[1]) and np.array_equal(dup[0], whole[3])


def test_predict_tie_and_dominance_rules(monkeypatch):
    cfg = HarNetConfig(**TINY)
    m = HarNet.build(cfg, 0)
    x, f = _inputs(cfg, 2)
    rows = np.array([[0.0] * 6, [0, 9, 0, 0, 0, 0]], dtype=float)
    monkeypatch.setattr(m, "forward", lambda *_: rows)
    labels, probs = m.predict(x, f)
    assert labels.tolist() == [0, 1] and probs[1, 1] > 0.999


def test_conventional_equals_separable_with_one_channel():
    common = dict(TINY, streams=1)
    sep = HarNet.build(HarNetConfig(**common), 0)
    conv = HarNet.build(HarNetConfig(**common, conv_mode="conventional"), 9)
    for k in sep.params:
        conv.params[k].value[...] = sep.params[k].value
    x, f = _inputs(sep.config, 3)
    assert np.array_equal(sep.forward(x, f), conv.forward(x, f))


def test_conventional_mode_mixes_streams():
    cfg = HarNetConfig(conv_mode="conventional", **TINY)
    m = HarNet.build(cfg, 1)
    x, _ = _inputs(cfg, 1)
    out = m.stage_outputs(x)
    assert out[0].shape == (1, 1, cfg.maps_per_stage, 64)
    x2 = x.copy()
    x2[:, 3] = 0.0
    assert not np.array_equal(m.stage_outputs(x2)[0], out[0])


def test_per_stream_weights_option():
    cfg = HarNetConfig(share_across_streams=False, **TINY)
    m = HarNet.build(cfg, 0)
    assert m.params["stage1/k5/w"].shape == (9, 2, 1, 5)
    x, f = _inputs(cfg, 2)
    assert m.forward(x, f).shape == (2, 6)


def test_fused_width_mismatch_is_contract_error():
    cfg = HarNetConfig(**TINY)
    m = HarNet.build(cfg, 0)
    x, _ = _inputs(cfg, 2)
    with pytest.raises(FusionContractError):
        m.forward(x, np.zeros((2, 117)))
    with pytest.raises(ShapeError):
        m.forward(x[:, :8], np.zeros((2, 561)))


@pytest.mark.parametrize("conv_mode", ["separable", "conventional"])
@pytest.mark.parametrize("fusion_mode", ["dataset561", "none"])
def test_small_graph_gradcheck(conv_mode, fusion_mode):
    cfg = HarNetConfig(conv_mode=conv_mode, fusion_mode=fusion_mode, **TINY)
    m = HarNet.build(cfg, 3)
    m.chunk = 4
    x, f = _inputs(cfg, 4, seed=1)
    y = np.array([0, 2, 4, 5])
    arrays = {k: p.value for k, p in m.params.items()}

    def lg():
        loss, _ = m.loss_and_backward(x, f, y)
        return loss, {k: p.grad for k, p in m.params.items()}

    report = nn.gradcheck(lg, arrays, 1e-4, samples=150, loss_only=lambda: m.loss(x, f, y))
    assert report.passed, str(report)


def test_input_gradient_matches_finite_differences():
    cfg = HarNetConfig(**TINY)
    m = HarNet.build(cfg, 3)
    x, f = _inputs(cfg, 2)
    y = np.array([1, 3])
    _, dx = m.loss_and_backward(x, f, y)
    rng = np.random.default_rng(0)
    for _ in range(20):
        i = tuple(int(rng.integers(0, d)) for d in x.shape)
        orig = x[i]
        x[i] = orig + 1e-5
        fp = m.loss(x, f, y)
        x[i] = orig - 1e-5
        fm = m.loss(x, f, y)
        x[i] = orig
        assert nn.relative_error(dx[i], (fp - fm) / 2e-5) < 1e-4


def test_loss_and_backward_is_repeatable():
    cfg = HarNetConfig(**TINY)
    m = HarNet.build(cfg, 3)
    x, f = _inputs(cfg, 20)
    y = np.arange(20) % 6
    loss_a, _ = m.loss_and_backward(x, f, y)
    grads_a = {k: p.grad.copy() for k, p in m.params.items()}
    loss_b, _ = m.loss_and_backward(x, f, y)
    assert loss_a == loss_b
    assert all(np.array_equal(grads_a[k], p.grad) for k, p in m.params.items())


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_is_bit_exact(tmp_path, mini):
    cfg = HarNetConfig(fusion_mode="regenerated", **TINY)
    from harnet.train import prepare_model

    m = prepare_model(cfg, mini.train, 7)
    path = tmp_path / "m.ckpt"
    m.save(path, {"note": "x"})
    back = HarNet.load(path)
    assert back.config == cfg and back.seed == 7
    assert all(np.array_equal(back.params[k].value, m.params[k].value) for k in m.params)
    assert all(np.array_equal(back.preprocessing[k], m.preprocessing[k]) for k in m.preprocessing)
    w, fz = m.prepare_inputs(mini.test)
    assert np.array_equal(back.forward(w, fz), m.forward(w, fz))


def test_checkpoint_config_mismatch(tmp_path):
    m = HarNet.build(HarNetConfig(fusion_mode="none", **TINY), 0)
    path = tmp_path / "m.ckpt"
    m.save(path)
    with pytest.raises(FusionContractError):
        HarNet.load(path, expected=HarNetConfig(fusion_mode="dataset561", **TINY))
    with pytest.raises(ContractError):
        HarNet.load(path, expected=HarNetConfig(fusion_mode="none", **dict(TINY, fc1_units=8)))
    with pytest.raises(FusionContractError):
        check_config_match(m.config, HarNetConfig(**TINY), keys=["fusion_mode"])


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    HarNet.build(HarNetConfig(**TINY), 0).save(path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        HarNet.load(path)
    path.write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        HarNet.load(path)
