from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dataset
from gradcheck import draw_smooth_instance, max_relative_error
from siamese_fewshot.augment import AugmentConfig
from siamese_fewshot.model import (
    BackboneConfig,
    ConvBlock,
    IncompatibleWeightsError,
    PairBatch,
    SGDState,
    TrainConfig,
    WeightFileError,
    class_weights,
    contrastive_dloss_dD,
    contrastive_loss,
    distance,
    embed,
    export_weights,
    forward,
    forward_batch,
    import_weights,
    init_parameters,
    loss_gradient,
    predict_with_head,
    pretrain_classifier,
    sgd_step,
    train_classifier,
    train_siamese,
    weighted_contrastive_loss,
)
from siamese_fewshot.model import layers as L
from siamese_fewshot.model.network import WEIGHTS_MAGIC, ModelError
from siamese_fewshot.pairing import PairingConfig
from siamese_fewshot.synthetic import make_synthetic_dataset

SMALL = BackboneConfig(input_shape=(8, 8, 1), conv_blocks=(ConvBlock(4), ConvBlock(6)), embedding_dim=8)


# ---- parameters and forward


def test_scratch_init_deterministic():
    a = init_parameters(SMALL, "scratch_random", seed=3)
    b = init_parameters(SMALL, "scratch_random", seed=3)
    assert a.bitwise_equal(b)
    assert not a.bitwise_equal(init_parameters(SMALL, "scratch_random", seed=4))


def test_default_backbone_shapes():
    cfg = BackboneConfig()
    shapes = cfg.tensor_shapes()
    assert shapes["conv0.weight"] == (8, 1, 3, 3)
    assert shapes["conv2.weight"] == (32, 16, 3, 3)
    assert shapes["dense.weight"] == (4 * 4 * 32, 64)
    assert cfg.n_parameters() == sum(int(np.prod(s)) for s in shapes.values())


def test_unit_norm_embeddings():
    p = init_parameters(SMALL, seed=1)
    imgs = np.random.default_rng(0).random((10, 8, 8, 1)).astype(np.float32)
    norms = np.linalg.norm(embed(p, imgs), axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-5)


def test_identical_images_identical_embeddings():
    p = init_parameters(SMALL, seed=1)
    img = np.random.default_rng(1).random((8, 8, 1))
    np.testing.assert_array_equal(forward(p, img), forward(p, img.copy()))
    batch, _ = forward_batch(p, np.stack([img, img]))
    np.testing.assert_array_equal(batch[0], batch[1])


def test_zero_image_bias_free_net():
    cfg = BackboneConfig(input_shape=(8, 8, 1), conv_blocks=(ConvBlock(4),), embedding_dim=5, use_bias=False)
    p = init_parameters(cfg, seed=2)
    z, _ = L.conv2d_forward(np.zeros((1, 1, 8, 8), np.float32), p["conv0.weight"], None)
    assert not z.any()
    emb, tape = forward_batch(p, np.zeros((1, 8, 8, 1)), keep_tape=True)
    dense_input = next(c for kind, _, c in tape if kind == "dense")
    assert not dense_input.any()
    assert not emb.any()


def test_wrong_input_shape():
    p = init_parameters(SMALL)
    with pytest.raises(ModelError, match="input_shape"):
        forward(p, np.zeros((9, 8, 1)))


# ---- weight files


def test_export_import_round_trip(tmp_path):
    p = init_parameters(SMALL, seed=5)
    export_weights(p, tmp_path / "w.bin")
    q = import_weights(tmp_path / "w.bin", SMALL)
    assert q.bitwise_equal(p) and q.source == "imported"
    r = init_parameters(SMALL, "imported", path=tmp_path / "w.bin")
    assert r.bitwise_equal(p)


def test_truncated_tensor_names_layer(tmp_path):
    p = init_parameters(SMALL, seed=5)
    export_weights(p, tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(WeightFileError, match="layer dense.bias truncated"):
        import_weights(tmp_path / "t.bin")


def test_version_mismatch(tmp_path):
    p = init_parameters(SMALL)
    export_weights(p, tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "v.bin").write_bytes(data.replace(b'"version": 1', b'"version": 9'))
    with pytest.raises(IncompatibleWeightsError):
        import_weights(tmp_path / "v.bin")


def test_shape_mismatch_names_layer(tmp_path):
    export_weights(init_parameters(SMALL), tmp_path / "w.bin")
    other = BackboneConfig(input_shape=(8, 8, 1), conv_blocks=(ConvBlock(5), ConvBlock(6)), embedding_dim=8)
    with pytest.raises(WeightFileError, match=r"conv0.weight.*\(5, 1, 3, 3\)"):
        import_weights(tmp_path / "w.bin", other)


def test_bad_magic_and_unwritable(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage" * 4)
    with pytest.raises(WeightFileError, match="magic"):
        import_weights(tmp_path / "x.bin")
    with pytest.raises(OSError):
        export_weights(init_parameters(SMALL), tmp_path / "missing" / "dir" / "w.bin")
    assert WEIGHTS_MAGIC.startswith(b"SIAM")


# ---- losses


def test_distance_examples():
    e = np.array([0.6, 0.8])
    assert distance(e, e) == 0
    assert distance(e, -e) == pytest.approx(2.0)
    assert distance([0, 3], [4, 0]) == 5.0


def test_contrastive_examples():
    assert contrastive_loss(0.0, 0, 1.0) == 0
    assert contrastive_loss(0.0, 1, 1.0) == 1
    for d in (1.0, 1.3, 7.0):
        assert contrastive_loss(d, 1, 1.0) == 0


# distances whose square underflows to 0.0 are excluded; the zero set is exact otherwise
@given(st.one_of(st.just(0.0), st.floats(1e-150, 5)), st.sampled_from([0, 1]), st.floats(0.1, 4))
def test_loss_zero_set(d, y, m):
    value = contrastive_loss(d, y, m)
    assert value >= 0
    assert (value == 0) == ((y == 0 and d == 0) or (y == 1 and d >= m))
    assert weighted_contrastive_loss(d, y, m, 1.0, 1.0) == value


def test_class_weights_examples():
    w = class_weights({0: 100, 1: 10})
    assert w[0] == pytest.approx(0.55) and w[1] == pytest.approx(5.5)
    assert class_weights({0: 50, 1: 50}) == {0: 1.0, 1: 1.0}
    assert class_weights({0: 100, 1: 1})[1] == pytest.approx(50.5)
    ds = make_dataset({0: 100, 1: 10}, shape=(1, 1, 1))
    assert class_weights(ds) == w


@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_class_weight_identity(a, b):
    w = class_weights({0: a, 1: b})
    assert abs(w[0] * a + w[1] * b - (a + b)) <= 1e-9 * (a + b)


def test_weighted_loss_example():
    assert weighted_contrastive_loss(0.5, 1, 1.0, 0.55, 5.5) == pytest.approx(0.75625)
    assert weighted_contrastive_loss(0.0, 0, 1.0, 0.55, 5.5) == 0


def test_dloss_dD_examples():
    assert contrastive_dloss_dD(0.25, 0) == 0.5
    assert contrastive_dloss_dD(1.5, 0) == 3.0
    assert contrastive_dloss_dD(0.25, 1) == -1.5
    assert contrastive_dloss_dD(1.5, 1) == 0


def _batch(rng, n, shape=(8, 8, 1), y=None):
    y = rng.integers(0, 2, n) if y is None else np.asarray(y)
    la = rng.integers(0, 2, n)
    return PairBatch(rng.random((n, *shape)), rng.random((n, *shape)), y, la, np.where(y == 0, la, 1 - la))


def test_satisfied_batch_has_zero_gradient():
    rng = np.random.default_rng(0)
    p = init_parameters(SMALL, seed=1, dtype=np.float64)
    imgs = rng.random((3, 8, 8, 1))
    # identical same-class pairs: D = 0
    same = PairBatch(imgs, imgs.copy(), np.zeros(3, int), np.zeros(3, int), np.zeros(3, int))
    loss, grads, _ = loss_gradient(same, p)
    assert loss == 0 and all(not g.any() for g in grads.values())
    # different-class pairs beyond a tiny margin
    far = _batch(rng, 3, y=[1, 1, 1])
    loss, grads, per_pair = loss_gradient(far, p, margin=1e-9)
    assert loss == 0 and all(not g.any() for g in grads.values())


def test_swap_symmetry():
    rng = np.random.default_rng(1)
    p = init_parameters(SMALL, seed=1, dtype=np.float64)
    batch = _batch(rng, 6)
    w = {0: 0.55, 1: 5.5}
    la, ga, _ = loss_gradient(batch, p, 1.0, w)
    lb, gb, _ = loss_gradient(batch.swapped(), p, 1.0, w)
    assert la == pytest.approx(lb, rel=1e-12)
    for k in ga:
        np.testing.assert_allclose(ga[k], gb[k], rtol=1e-9, atol=1e-14)


def test_unit_weights_equal_plain_bitwise():
    rng = np.random.default_rng(2)
    p = init_parameters(SMALL, seed=1, dtype=np.float64)
    batch = _batch(rng, 5)
    la, ga, _ = loss_gradient(batch, p)
    lb, gb, _ = loss_gradient(batch, p, weights={0: 1.0, 1: 1.0})
    assert la == lb and all(np.array_equal(ga[k], gb[k]) for k in ga)


def test_batch_loss_matches_scalar_formula():
    rng = np.random.default_rng(3)
    p = init_parameters(SMALL, seed=1, dtype=np.float64)
    batch = _batch(rng, 6)
    w = {0: 0.55, 1: 5.5}
    loss, _, per_pair = loss_gradient(batch, p, 1.0, w)
    ea, eb = embed(p, batch.images_a), embed(p, batch.images_b)
    ref = [weighted_contrastive_loss(distance(a, b), int(y), 1.0, w[int(ca)], w[int(cb)])
           for a, b, y, ca, cb in zip(ea, eb, batch.y, batch.labels_a, batch.labels_b)]
    assert loss == pytest.approx(np.mean(ref), rel=1e-12)


@pytest.mark.parametrize("weights", [None, {0: 0.55, 1: 5.5}])
def test_gradient_matches_finite_differences(weights):
    rng = np.random.default_rng(11)
    for _ in range(3):
        p, batch = draw_smooth_instance(rng)
        assert max_relative_error(p, batch, weights=weights) < 1e-4


# ---- optimizer


def test_zero_gradient_fixed_point():
    p = init_parameters(SMALL, seed=1)
    zero = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    q = sgd_step(p, zero, TrainConfig(), SGDState())
    assert q.bitwise_equal(p)


def test_zero_momentum_is_vanilla_sgd():
    p = init_parameters(SMALL, seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    g = {k: rng.normal(size=v.shape) for k, v in p.tensors.items()}
    cfg = TrainConfig(learning_rate=0.05, momentum=0.0, decay=0.0)
    q = sgd_step(p, g, cfg, SGDState())
    for k in p.tensors:
        np.testing.assert_allclose(q[k], p[k] - 0.05 * g[k], rtol=0, atol=1e-15)


def test_nesterov_quadratic():
    # every coordinate starts at 1 with gradient 2x, so each follows the scalar
    # recurrence v = 0.9 v - 0.1 g ; x = x + 0.9 v - 0.1 g (oracle: -6.0895e-08)
    p = init_parameters(SMALL, dtype=np.float64)
    p = p.replace({k: np.ones_like(v) for k, v in p.tensors.items()})
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9, decay=0.0)
    state = SGDState()
    for _ in range(100):
        p = sgd_step(p, {k: 2 * v for k, v in p.tensors.items()}, cfg, state)
    for v in p.tensors.values():
        assert np.all(np.abs(v) < 1e-3)
        np.testing.assert_allclose(v, -6.089521233299574e-08, rtol=1e-9)
    assert state.step == 100


def test_learning_rate_decay():
    from siamese_fewshot.model.optim import learning_rate

    assert learning_rate(0.01, 1e-6, 0) == 0.01
    assert learning_rate(0.01, 0.5, 2) == pytest.approx(0.005)


# ---- training


@pytest.fixture(scope="module")
def blobs():
    return make_synthetic_dataset("tiny", train_counts=(30, 10), test_counts=(0, 0), size=8, noise=0.05, seed=1)


TINY = BackboneConfig(input_shape=(8, 8, 1), conv_blocks=(ConvBlock(4), ConvBlock(8)), embedding_dim=8)


def test_zero_epochs_noop(blobs):
    init = init_parameters(TINY, seed=0)
    params, history = train_siamese(blobs, PairingConfig(), AugmentConfig(), TrainConfig(epochs=0), init)
    assert params is init and history == []


def test_training_deterministic_and_decreasing(blobs):
    init = init_parameters(TINY, seed=0)
    cfg = TrainConfig(epochs=8, loss="weighted", seed=4)
    pairing = PairingConfig(1, 1, balanced_sampling=True)
    a, ha = train_siamese(blobs, pairing, AugmentConfig(10), cfg, init)
    b, hb = train_siamese(blobs, pairing, AugmentConfig(10), cfg, init)
    assert a.bitwise_equal(b) and ha == hb
    assert len(ha) == 8 and ha[-1] < ha[0]
    assert not a.bitwise_equal(init)


def test_history_callback(blobs):
    seen = []
    train_siamese(blobs, PairingConfig(), AugmentConfig(), TrainConfig(epochs=2),
                  init_parameters(TINY), history_callback=lambda e, v: seen.append(e))
    assert seen == [0, 1]


def test_pretrain_head_accuracy_and_round_trip(tmp_path):
    source = make_synthetic_dataset("src", train_counts=(40, 40), test_counts=(0, 0), size=8, noise=0.05, seed=2)
    init = init_parameters(TINY, seed=0)
    cfg = TrainConfig(epochs=20, learning_rate=0.05, seed=2)
    params, head, history = train_classifier(source, init, cfg)
    acc = np.mean(predict_with_head(params, head, source.images()) == source.labels)
    assert acc > 0.9 and history[-1] < history[0]
    backbone = pretrain_classifier(source, init, cfg)
    assert backbone.source == "pretrained" and backbone.bitwise_equal(params)
    export_weights(backbone, tmp_path / "pre.bin")
    again = init_parameters(TINY, "imported", path=tmp_path / "pre.bin")
    assert again.bitwise_equal(backbone) and again.source == "pretrained"


def test_pretrain_zero_epochs(blobs):
    init = init_parameters(TINY, seed=0)
    assert pretrain_classifier(blobs, init, TrainConfig(epochs=0)).bitwise_equal(init)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="focal")
    with pytest.raises(ValueError):
        TrainConfig(margin=0)
