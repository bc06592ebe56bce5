import numpy as np
import pytest

from cnnscope.config import parse_config
from cnnscope.data import LabeledImage
from cnnscope.errors import (
    UsageError,
    WeightMagicError,
    WeightShapeError,
    WeightTruncationError,
    WeightVersionError,
)
from cnnscope.model import (
    Hyper,
    LayerAddress,
    ModelSpec,
    StageSpec,
    build_model,
    default_spec,
    evaluate,
    forward,
    forward_with_activations,
    load_weights,
    save_weights,
    spec_from_config,
    train,
    validate_address,
)

rng = np.random.default_rng(99)

TINY = ModelSpec(num_classes=2, input_shape=(3, 8, 8), stem_channels=8,
                 stages=(StageSpec(8, 1, 1), StageSpec(8, 1, 2),
                         StageSpec(16, 1, 2), StageSpec(16, 1, 2)))


def toy_separable_dataset(n=64, seed=5):
    """Linearly separable by the channel-0 mean: class 0 bright, class 1 dark."""
    r = np.random.default_rng(seed)
    images = []
    for i in range(n):
        label = i % 2
        base = 0.8 if label == 0 else 0.2
        pix = np.clip(r.normal(base, 0.05, size=(3, 8, 8)), 0.0, 1.0)
        images.append(LabeledImage(pixels=pix, label=label, source_id=f"toy:{i}"))
    return images


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------


def test_spec_requires_four_stages():
    with pytest.raises(UsageError, match="4 stages"):
        ModelSpec(num_classes=2, stages=(StageSpec(8),) * 3)


def test_spec_requires_nondecreasing_channels():
    with pytest.raises(UsageError, match="non-decreasing"):
        ModelSpec(num_classes=2, stages=(StageSpec(16), StageSpec(8),
                                         StageSpec(32), StageSpec(32)))


def test_spec_from_config_roundtrip():
    text = """
    [model]
    num_classes = 3
    input_shape = [3, 16, 16]
    stem_channels = 4

    [model.stage1]
    channels = 4
    [model.stage2]
    channels = 8
    stride = 2
    [model.stage3]
    channels = 8
    stride = 2
    [model.stage4]
    channels = 8
    stride = 2
    """
    spec = spec_from_config(parse_config(text))
    assert spec.num_classes == 3
    assert spec.input_shape == (3, 16, 16)
    assert spec.stages[1] == StageSpec(8, 1, 2)


def test_address_validation():
    spec = default_spec(2)
    validate_address(LayerAddress("filter", layer_name="layer1", channel_index=15), spec)
    with pytest.raises(Exception):
        validate_address(LayerAddress("filter", layer_name="layer1", channel_index=16), spec)
    with pytest.raises(Exception):
        validate_address(LayerAddress("presoftmax", class_index=2), spec)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_activation_map_has_exactly_documented_keys():
    m = build_model(TINY, seed=0)
    _, acts = forward_with_activations(m, rng.normal(size=(2, 3, 8, 8)))
    assert sorted(acts) == ["layer1", "layer2", "layer3", "layer4", "stem"]


def test_forward_eval_is_bitwise_deterministic():
    m = build_model(TINY, seed=0)
    x = rng.normal(size=(3, 3, 8, 8))
    a1, acts1 = forward_with_activations(m, x)
    a2, acts2 = forward_with_activations(m, x)
    assert np.array_equal(a1.data, a2.data)
    for k in acts1:
        assert np.array_equal(acts1[k].data, acts2[k].data)


def test_layer4_shape_follows_stride_arithmetic():
    m = build_model(default_spec(10), seed=0)
    _, acts = forward_with_activations(m, rng.normal(size=(2, 3, 32, 32)))
    assert acts["layer4"].data.shape == (2, 128, 32 // 8, 32 // 8)


def test_constant_channel_input_logits_depend_on_channel_means_only():
    # with a global-average-pool head, a channel-constant image equals its
    # spatial transpose, so the logits cannot see spatial arrangement
    m = build_model(TINY, seed=1)
    x = np.ones((1, 3, 8, 8)) * np.array([0.3, 0.6, 0.9]).reshape(1, 3, 1, 1)
    xt = np.ascontiguousarray(np.transpose(x, (0, 1, 3, 2)))
    l1 = forward(m, x).data
    l2 = forward(m, xt).data
    assert np.array_equal(l1, l2)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_toy_training_fits_separable_data():
    images = toy_separable_dataset()
    m = build_model(TINY, seed=3)
    report = train(m, images, images, Hyper(lr=0.05, epochs=10, batch_size=16,
                                            seed=3, hflip=False, weight_decay=0.0))
    assert report.epoch_accuracy[-1] == 1.0
    assert report.val_accuracy == 1.0


def test_lr_zero_leaves_params_and_loss_unchanged():
    images = toy_separable_dataset(n=32)
    m = build_model(TINY, seed=4)
    before = {k: v.data.copy() for k, v in m.params.items()}
    report = train(m, images, images, Hyper(lr=0.0, epochs=3, batch_size=8,
                                            seed=4, hflip=False))
    for k, v in m.params.items():
        assert np.array_equal(before[k], v.data), k
    assert report.epoch_loss[0] == report.epoch_loss[1] == report.epoch_loss[2]


def test_training_is_seed_reproducible():
    images = toy_separable_dataset(n=32)
    outs = []
    for _ in range(2):
        m = build_model(TINY, seed=7)
        train(m, images, images, Hyper(lr=0.03, epochs=2, batch_size=8, seed=7))
        outs.append({k: v.data.copy() for k, v in m.params.items()})
    for k in outs[0]:
        assert np.array_equal(outs[0][k], outs[1][k]), k


def test_label_out_of_range_rejected():
    images = toy_separable_dataset(n=8)
    images[3] = LabeledImage(images[3].pixels, 5, images[3].source_id)
    m = build_model(TINY, seed=0)
    with pytest.raises(UsageError, match="label"):
        train(m, images, images, Hyper(lr=0.1, epochs=1))


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------


def test_weight_roundtrip_logits_close(tmp_path):
    m = build_model(TINY, seed=11)
    x = rng.normal(size=(4, 3, 8, 8))
    base = forward(m, x).data
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    m2 = load_weights(p, TINY)
    again = forward(m2, x).data
    assert np.max(np.abs(base - again)) < 1e-4


def test_weight_load_infers_spec(tmp_path):
    m = build_model(default_spec(7), seed=2)
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    m2 = load_weights(p)
    assert m2.spec == default_spec(7)


def test_weight_roundtrip_preserves_eval_accuracy(tmp_path):
    images = toy_separable_dataset(n=48)
    m = build_model(TINY, seed=13)
    train(m, images[:32], images[32:], Hyper(lr=0.05, epochs=4, batch_size=8, seed=13))
    acc1 = evaluate(m, images[32:])
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    acc2 = evaluate(load_weights(p, TINY), images[32:])
    assert acc1 == acc2


def test_weight_bad_magic(tmp_path):
    m = build_model(TINY, seed=0)
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    raw = bytearray(p.read_bytes())
    raw[0] = ord("X")
    p.write_bytes(bytes(raw))
    with pytest.raises(WeightMagicError):
        load_weights(p, TINY)


def test_weight_bad_version(tmp_path):
    m = build_model(TINY, seed=0)
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(WeightVersionError):
        load_weights(p, TINY)


def test_weight_truncation_names_tensor(tmp_path):
    m = build_model(TINY, seed=0)
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    raw = p.read_bytes()
    p.write_bytes(raw[: int(len(raw) * 0.6)])
    with pytest.raises(WeightTruncationError, match="tensor"):
        load_weights(p, TINY)


def test_weight_shape_mismatch_vs_spec(tmp_path):
    m = build_model(TINY, seed=0)
    p = tmp_path / "w.mcnn"
    save_weights(m, p)
    other = ModelSpec(num_classes=2, input_shape=(3, 8, 8), stem_channels=4,
                      stages=(StageSpec(4, 1, 1), StageSpec(8, 1, 2),
                              StageSpec(16, 1, 2), StageSpec(16, 1, 2)))
    with pytest.raises(WeightShapeError):
        load_weights(p, other)
