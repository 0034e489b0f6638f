import numpy as np
import pytest

from locpred.checkpoint import load_checkpoint, save_checkpoint
from locpred.models import (
    ConvPgpConfig,
    ConvPgpModel,
    RolloutSchedule,
    Variant,
    VlnConfig,
    VlnModel,
    build_model,
    default_schedule,
    param_count,
)
from locpred.rng import generator


def small_vln(variant=Variant.BASE, hw=16):
    return VlnConfig(height=hw, width=hw, enc1_channels=4, enc2_channels=4,
                     lstm_channels=4, dec_channels=4, variant=variant)


def small_pgp(variant=Variant.BASE, hw=12):
    return ConvPgpConfig(height=hw, width=hw, factor_channels=3, factor_kernel=3,
                         mapping_channels=4, mapping_kernel=3, variant=variant)


def _clip(seed, n=2, t=10, hw=16):
    rng = generator(seed)
    return rng.random((n, t, 1, hw, hw))


def _mask(hw=16):
    m = np.zeros((hw, hw))
    m[4::8, :] = 1.0
    m[:, 4::8] = 1.0
    return m


# ---------------------------------------------------------------------------
# parameter counts (defaults documented in the README)

VLN_EXPECTED = {Variant.BASE: 87841, Variant.AI: 88705, Variant.LDC: 96033, Variant.LDCAI: 96321}
PGP_EXPECTED = {Variant.BASE: 38784, Variant.AI: 39648, Variant.LDC: 54160, Variant.LDCAI: 54448}


@pytest.mark.parametrize("variant", list(Variant))
def test_vln_default_param_count(variant):
    model = VlnModel(VlnConfig(variant=variant), seed=0)
    assert param_count(model) == VLN_EXPECTED[variant]


@pytest.mark.parametrize("variant", list(Variant))
def test_pgp_default_param_count(variant):
    model = ConvPgpModel(ConvPgpConfig(variant=variant), seed=0)
    assert param_count(model) == PGP_EXPECTED[variant]


def test_param_count_deltas_exact():
    # ldc adds exactly two H*W maps per biased layer; ai adds exactly the
    # extra input-channel slices of the first convolution(s)
    assert VLN_EXPECTED[Variant.LDC] - VLN_EXPECTED[Variant.BASE] == 2 * 64 * 64
    assert VLN_EXPECTED[Variant.AI] - VLN_EXPECTED[Variant.BASE] == 3 * 32 * 3 * 3
    hv = 64 - 3 + 1
    assert PGP_EXPECTED[Variant.LDC] - PGP_EXPECTED[Variant.BASE] == 2 * (2 * hv * hv)
    assert PGP_EXPECTED[Variant.AI] - PGP_EXPECTED[Variant.BASE] == 2 * (3 * 16 * 3 * 3)


def test_param_count_excludes_fixed_encodings():
    ldcai = VlnModel(VlnConfig(variant=Variant.LDCAI), seed=0)
    names = [n for n, _ in ldcai.named_parameters()]
    assert "enc1.bias_map1" in names and "enc1.bias_map2" in names
    # the coordinate ramps exist but are not parameters
    assert not any("loc" in n for n in names)


# ---------------------------------------------------------------------------
# VLN rollout


def test_vln_emits_horizon_predictions():
    model = VlnModel(small_vln(), seed=1)
    preds = model.forward_sequence(_clip(60), RolloutSchedule(8, 2))
    assert [k for k, _ in preds] == list(range(1, 11))
    for _, p in preds:
        assert p.shape == (2, 1, 16, 16)
        assert np.all((p.data > 0.0) & (p.data < 1.0))


def test_vln_closed_loop_ignores_trailing_ground_truth():
    model = VlnModel(small_vln(), seed=2)
    frames = _clip(61)
    zeroed = frames.copy()
    zeroed[:, 8:] = 0.0  # the last two frames are never read as inputs
    a = model.forward_sequence(frames, RolloutSchedule(8, 2))
    b = model.forward_sequence(zeroed, RolloutSchedule(8, 2))
    for (_, pa), (_, pb) in zip(a, b):
        assert np.array_equal(pa.data, pb.data)


def test_vln_prefix_predictions_are_causal():
    model = VlnModel(small_vln(), seed=3)
    frames = _clip(62)
    tail_zeroed = frames.copy()
    tail_zeroed[:, 5:] = 0.0
    a = model.forward_sequence(frames, RolloutSchedule(8, 2))
    b = model.forward_sequence(tail_zeroed, RolloutSchedule(8, 2))
    for (ka, pa), (_, pb) in zip(a[:5], b[:5]):
        assert ka <= 5
        assert np.array_equal(pa.data, pb.data)


def test_vln_schedule_longer_than_clip_rejected():
    model = VlnModel(small_vln(), seed=4)
    with pytest.raises(ValueError):
        model.forward_sequence(_clip(63, t=5), RolloutSchedule(8, 2))


def test_vln_variant_equivalence_at_init():
    # zero-initialised bias maps make ldc coincide with base exactly
    base = VlnModel(small_vln(Variant.BASE), seed=5)
    ldc = VlnModel(small_vln(Variant.LDC), seed=5)
    frames = _clip(64, n=1, t=4)
    a = base.forward_sequence(frames, RolloutSchedule(3, 1))
    b = ldc.forward_sequence(frames, RolloutSchedule(3, 1))
    for (_, pa), (_, pb) in zip(a, b):
        assert np.array_equal(pa.data, pb.data)


def test_vln_batch_order_independence():
    model = VlnModel(small_vln(), seed=6)
    frames = _clip(65, n=2, t=6)
    fwd = model.forward_sequence(frames, RolloutSchedule(4, 2))
    swapped = model.forward_sequence(frames[::-1].copy(), RolloutSchedule(4, 2))
    for (_, pa), (_, pb) in zip(fwd, swapped):
        assert np.array_equal(pa.data[0], pb.data[1])
        assert np.array_equal(pa.data[1], pb.data[0])


@pytest.mark.parametrize("variant", [Variant.AI, Variant.LDCAI])
def test_vln_masked_variants_require_mask(variant):
    model = VlnModel(small_vln(variant), seed=7)
    with pytest.raises(ValueError):
        model.forward_sequence(_clip(66), RolloutSchedule(4, 1))
    model.forward_sequence(_clip(66), RolloutSchedule(4, 1), mask=_mask())


# ---------------------------------------------------------------------------
# Conv-PGP rollout


def test_pgp_emits_predictions_for_frames_2_to_horizon():
    model = ConvPgpModel(small_pgp(), seed=8)
    preds = model.forward_sequence(_clip(67, hw=12), RolloutSchedule(3, 7))
    assert [k for k, _ in preds] == list(range(2, 10))
    closed = [k for k, _ in preds if k >= 3]
    assert len(closed) == 7  # exactly seven closed-loop frames
    for _, p in preds:
        assert p.shape == (2, 1, 12, 12)
        assert np.all((p.data > 0.0) & (p.data < 1.0))


def test_pgp_closed_loop_ignores_trailing_ground_truth():
    model = ConvPgpModel(small_pgp(), seed=9)
    frames = _clip(68, hw=12)
    zeroed = frames.copy()
    zeroed[:, 3:] = 0.0  # only frames 0..2 may be read
    a = model.forward_sequence(frames, RolloutSchedule(3, 7))
    b = model.forward_sequence(zeroed, RolloutSchedule(3, 7))
    for (_, pa), (_, pb) in zip(a, b):
        assert np.array_equal(pa.data, pb.data)


def test_pgp_needs_two_given_frames():
    model = ConvPgpModel(small_pgp(), seed=10)
    with pytest.raises(ValueError):
        model.forward_sequence(_clip(69, hw=12), RolloutSchedule(1, 9))


def test_pgp_variant_equivalence_at_init():
    base = ConvPgpModel(small_pgp(Variant.BASE), seed=11)
    ldc = ConvPgpModel(small_pgp(Variant.LDC), seed=11)
    frames = _clip(70, n=1, t=5, hw=12)
    a = base.forward_sequence(frames, RolloutSchedule(3, 2))
    b = ldc.forward_sequence(frames, RolloutSchedule(3, 2))
    for (_, pa), (_, pb) in zip(a, b):
        assert np.array_equal(pa.data, pb.data)


# ---------------------------------------------------------------------------
# schedules and factories


def test_default_schedules_match_published_protocol():
    assert default_schedule("vln") == RolloutSchedule(8, 2)
    assert default_schedule("conv-pgp") == RolloutSchedule(3, 7)
    assert RolloutSchedule(8, 2).horizon == 10


def test_build_model_roundtrip():
    cfg = small_vln(Variant.LDC)
    model = build_model("vln", cfg.to_dict(), seed=3)
    assert isinstance(model, VlnModel) and model.variant is Variant.LDC
    with pytest.raises(ValueError):
        build_model("mlp", {})


def test_vln_config_validation():
    with pytest.raises(ValueError):
        VlnConfig(height=63)  # not divisible by the encoder stride
    with pytest.raises(ValueError):
        VlnConfig(dec_channels=16)  # shortcut needs matching channels


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bitexact(tmp_path):
    model = VlnModel(small_vln(Variant.LDCAI), seed=12)
    # make parameters non-trivial
    for _, p in model.named_parameters():
        p.data += 0.01
    path = tmp_path / "model.ldvp"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.kind == "vln" and restored.variant is Variant.LDCAI
    for (na, pa), (nb, pb) in zip(model.named_parameters(), restored.named_parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()
    frames = _clip(71, n=1, t=4)
    a = model.forward_sequence(frames, RolloutSchedule(3, 1), mask=_mask())
    b = restored.forward_sequence(frames, RolloutSchedule(3, 1), mask=_mask())
    for (_, x), (_, y) in zip(a, b):
        assert np.array_equal(x.data, y.data)


def test_checkpoint_roundtrip_pgp(tmp_path):
    model = ConvPgpModel(small_pgp(Variant.LDC), seed=13)
    path = tmp_path / "model.ldvp"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert param_count(restored) == param_count(model)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ldvp"
    model = VlnModel(small_vln(), seed=14)
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "trunc.ldvp"
    model = VlnModel(small_vln(), seed=15)
    save_checkpoint(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 100])
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(blob[:6])
    with pytest.raises(ValueError):
        load_checkpoint(path)
