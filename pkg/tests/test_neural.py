import itertools

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lvseg.neural import layers as L
from lvseg.neural.augment import AffineParams, AugmentConfig, apply_affine, augment_pair, sample_affine
from lvseg.neural.checkpoint import ModelCheckpoint
from lvseg.neural.loss import generalized_dice_loss, one_hot
from lvseg.neural.optim import Adam
from lvseg.neural.trainer import SliceSet, TrainConfig, evaluate_loss, predict_probs, train_model
from lvseg.neural.unet import UNet, UNetConfig, unet_forward

from gradcheck import check_layer, layer_cases, numeric_grad, rel_error, unet_gradcheck


# -- forward oracles ---------------------------------------------------------

def conv_loop(x, w, b):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, h, wd))
    for i, j, y, z in itertools.product(range(n), range(o), range(h), range(wd)):
        out[i, j, y, z] = (xp[i, :, y:y + k, z:z + k] * w[j]).sum() + b[j]
    return out


def tconv_loop(x, w, b):
    n, c, h, wd = x.shape
    o = w.shape[1]
    out = np.zeros((n, o, 2 * h, 2 * wd)) + b[None, :, None, None]
    for i, ci, y, z in itertools.product(range(n), range(c), range(h), range(wd)):
        out[i, :, 2 * y:2 * y + 2, 2 * z:2 * z + 2] += x[i, ci, y, z] * w[ci]
    return out


def test_conv_matches_loop(rng):
    x, w, b = rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    assert np.allclose(L.conv2d_forward(x, w, b)[0], conv_loop(x, w, b))


def test_tconv_matches_loop(rng):
    x, w, b = rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(3, 2, 2, 2)), rng.normal(size=2)
    assert np.allclose(L.tconv2d_forward(x, w, b)[0], tconv_loop(x, w, b))


def test_maxpool_matches_loop(rng):
    x = rng.normal(size=(2, 2, 4, 6))
    out = L.maxpool2d_forward(x)[0]
    for i, c, y, z in itertools.product(range(2), range(2), range(2), range(3)):
        assert out[i, c, y, z] == x[i, c, 2 * y:2 * y + 2, 2 * z:2 * z + 2].max()
    with pytest.raises(ValueError):
        L.maxpool2d_forward(rng.normal(size=(1, 1, 3, 4)))


def test_batchnorm_statistics(rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    out, _ = L.batchnorm2d_forward(x, np.ones(3), np.zeros(3), rm, rv, True)
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
    ev, _ = L.batchnorm2d_forward(x, np.ones(3), np.zeros(3), rm.copy(), rv.copy(), False)
    assert np.allclose(ev, (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + L.BN_EPS))


def test_softmax_rows_sum_to_one(rng):
    p = L.softmax_forward(rng.normal(size=(2, 3, 4, 4)) * 50)
    assert np.allclose(p.sum(axis=1), 1.0) and np.all(p >= 0)


def test_shape_errors(rng):
    with pytest.raises(ValueError):
        L.conv2d_forward(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        L.conv2d_forward(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 2, 2, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        L.tconv2d_forward(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 2, 2)), np.zeros(2))


# -- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    for name, fwd, bwd, inputs in layer_cases(rng):
        assert check_layer(fwd, bwd, inputs, rng) < 1e-4, name


def test_gdl_gradient(rng):
    probs = L.softmax_forward(rng.normal(size=(2, 2, 4, 4)))
    target = one_hot(rng.random((2, 4, 4)) < 0.4)
    _, grad = generalized_dice_loss(probs, target)
    num = numeric_grad(lambda: generalized_dice_loss(probs, target)[0], probs)
    assert rel_error(grad, num) < 1e-4


def test_unet_gradient_one_seed():
    assert unet_gradcheck(123) < 1e-3


# -- loss --------------------------------------------------------------------

def test_gdl_fixtures():
    t = one_hot(np.array([[[0, 1], [1, 1]]]))
    assert generalized_dice_loss(t.copy(), t)[0] == pytest.approx(0.0, abs=1e-9)
    # predict everything as background
    p = one_hot(np.zeros((1, 2, 2), dtype=int))
    w0, w1 = 1 / (1 + 1e-6) ** 2, 1 / (3 + 1e-6) ** 2
    expected = 1 - 2 * (w0 * 1) / (w0 * (1 + 4) + w1 * 3)
    assert generalized_dice_loss(p, t)[0] == pytest.approx(expected)
    with pytest.raises(ValueError):
        generalized_dice_loss(p[:, :1], t)


@given(st.integers(0, 2 ** 32 - 1))
def test_gdl_range(seed):
    rng = np.random.default_rng(seed)
    p = L.softmax_forward(rng.normal(size=(2, 2, 3, 3)))
    loss, _ = generalized_dice_loss(p, one_hot(rng.random((2, 3, 3)) < 0.5))
    assert -1e-9 <= loss <= 1.0 + 1e-9


# -- optimizer ---------------------------------------------------------------

def test_adam_first_step_and_convergence():
    p = {"x": np.array([1.0, -2.0, 3.0])}
    opt = Adam(lr=0.1)
    opt.step(p, {"x": np.array([0.5, -4.0, 0.0])})
    # the first bias-corrected step is lr * g / (|g| + eps)
    assert np.allclose(p["x"], [0.9, -1.9, 3.0], atol=1e-7)
    q = {"x": np.array([5.0, -3.0])}
    opt = Adam(lr=0.05)
    for _ in range(2000):
        opt.step(q, {"x": 2 * q["x"]})
    assert np.allclose(q["x"], 0.0, atol=1e-2)
    with pytest.raises(ValueError):
        opt.step(q, {"x": np.zeros(3)})


def test_adam_hand_computed_two_steps():
    p = {"w": np.array([0.0])}
    opt = Adam(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    g1, g2 = 2.0, -1.0
    opt.step(p, {"w": np.array([g1])})
    opt.step(p, {"w": np.array([g2])})
    m1, v1 = 0.1 * g1, 0.001 * g1 ** 2
    step1 = 0.01 * (m1 / 0.1) / (np.sqrt(v1 / 0.001) + 1e-8)
    m2, v2 = 0.9 * m1 + 0.1 * g2, 0.999 * v1 + 0.001 * g2 ** 2
    step2 = 0.01 * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"][0] == pytest.approx(-step1 - step2, rel=1e-12)



def test_adam_quadratic_recurrence():
    """f(w) = w^2 from w = 1: 500 steps at lr 0.1 match a scalar recurrence and land near 0."""
    p = {"w": np.array([1.0])}
    opt = Adam(lr=0.1)
    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 501):
        opt.step(p, {"w": 2 * p["w"]})
        g = 2 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p["w"][0] == pytest.approx(w, rel=1e-9, abs=1e-12)
    assert abs(p["w"][0]) < 1e-2

# -- network -----------------------------------------------------------------

def test_unet_shapes_and_config(rng):
    cfg = UNetConfig(levels=3, base_filters=2, input_hw=(16, 16))
    model = UNet(cfg, rng)
    probs = unet_forward(model, rng.normal(size=(3, 1, 16, 16)))
    assert probs.shape == (3, 2, 16, 16) and np.allclose(probs.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        model.forward(rng.normal(size=(1, 1, 10, 16)))
    with pytest.raises(ValueError):
        UNetConfig(levels=3, input_hw=(18, 16))
    with pytest.raises(ValueError):
        UNetConfig(levels=1)
    with pytest.raises(RuntimeError):
        UNet(cfg).backward(np.zeros((1, 2, 16, 16)))
    with pytest.raises(ValueError):
        unet_forward(model, rng.normal(size=(1, 1, 16, 16)), mode="test")
    assert UNetConfig.paper_profile().filters(4) == 64 * 16


def test_eval_mode_does_not_touch_buffers(rng):
    model = UNet(UNetConfig(levels=2, base_filters=2, input_hw=(8, 8)), rng)
    before = {k: v.copy() for k, v in model.buffers.items()}
    model.forward(rng.normal(size=(2, 1, 8, 8)), train=False)
    assert all(np.array_equal(before[k], model.buffers[k]) for k in before)
    model.forward(rng.normal(size=(2, 1, 8, 8)), train=True)
    assert not all(np.array_equal(before[k], model.buffers[k]) for k in before)


def test_copy_is_independent(rng):
    model = UNet(UNetConfig(levels=2, base_filters=2, input_hw=(8, 8)), rng)
    other = model.copy()
    other.params["head.b"] += 1.0
    assert not np.array_equal(model.params["head.b"], other.params["head.b"])


# -- augmentation ------------------------------------------------------------

def test_identity_and_rot90(rng):
    img = rng.random((9, 9))
    msk = rng.random((9, 9)) < 0.5
    out, m = apply_affine(img, msk, AffineParams())
    assert np.array_equal(out, img) and np.array_equal(m, msk) and out is not img
    out, m = apply_affine(img, msk, AffineParams(rotate_deg=90.0))
    assert np.allclose(out, np.rot90(img)) and np.array_equal(m, np.rot90(msk))


def test_integer_translation(rng):
    img = rng.random((8, 8))
    msk = img > 0.5
    out, m = apply_affine(img, msk, AffineParams(translate_px=(2.0, -1.0)))
    assert np.allclose(out[2:, :7], img[:6, 1:])
    assert np.array_equal(m[2:, :7], msk[:6, 1:]) and not m[:2].any()


@given(st.integers(0, 2 ** 32 - 1))
def test_augment_keeps_mask_binary(seed):
    rng = np.random.default_rng(seed)
    img, msk = rng.random((16, 16)), rng.random((16, 16)) < 0.3
    out, m = augment_pair(img, msk, AugmentConfig(probability=1.0), rng)
    assert m.dtype == bool and out.shape == img.shape
    assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12


def test_augment_config_validation(rng):
    with pytest.raises(ValueError):
        AugmentConfig(probability=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(scale=(1.2, 1.0))
    assert sample_affine(AugmentConfig(probability=0.0), (8, 8), rng) == AffineParams()
    with pytest.raises(ValueError):
        apply_affine(np.zeros((4, 4)), np.zeros((4, 5)), AffineParams())


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    model = UNet(UNetConfig(levels=2, base_filters=3, input_hw=(8, 8)), rng)
    model.forward(rng.normal(size=(2, 1, 8, 8)), train=True)
    ck = ModelCheckpoint.from_model(model, epoch=4, history={"train_loss": [0.5], "val_loss": [0.6]},
                                    meta={"note": "x"})
    data = ck.to_bytes()
    back = ModelCheckpoint.from_bytes(data)
    assert back.to_bytes() == data and back.epoch == 4 and back.meta == {"note": "x"}
    ck.save(tmp_path / "m.ckpt")
    loaded = ModelCheckpoint.load(tmp_path / "m.ckpt").to_model()
    x = rng.normal(size=(1, 1, 8, 8))
    assert np.array_equal(loaded.forward(x), model.forward(x))


def test_checkpoint_errors(rng):
    data = ModelCheckpoint.from_model(UNet(UNetConfig(levels=2, base_filters=2, input_hw=(8, 8)), rng)).to_bytes()
    with pytest.raises(ValueError, match="too short"):
        ModelCheckpoint.from_bytes(data[:-8])
    with pytest.raises(ValueError, match="trailing"):
        ModelCheckpoint.from_bytes(data + b"\0")
    with pytest.raises(ValueError, match="manifest"):
        ModelCheckpoint.from_bytes(b"no newline")
    with pytest.raises(ValueError, match="format"):
        ModelCheckpoint.from_bytes(data.replace(b"lvseg-checkpoint/1", b"lvseg-checkpoint/9"))


# -- training loop -----------------------------------------------------------

def _blob_set(rng, n, hw=16):
    yy, xx = np.mgrid[:hw, :hw]
    imgs, msks = [], []
    for _ in range(n):
        cy, cx, r = rng.integers(5, hw - 5), rng.integers(5, hw - 5), rng.integers(2, 4)
        m = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        imgs.append(np.where(m, 0.1, 0.8) + rng.normal(0, 0.02, (hw, hw)))
        msks.append(m)
    return SliceSet(np.array(imgs), np.array(msks))


def test_overfit_small_set():
    rng = np.random.default_rng(0)
    model = UNet(UNetConfig(levels=2, base_filters=4, input_hw=(16, 16)), rng)
    data = _blob_set(rng, 8)
    cfg = TrainConfig(lr=1e-2, batch_size=8, max_epochs=150, early_stop_patience=149, augment=None)
    train_model(model, data, None, cfg)
    assert evaluate_loss(model, data) < 0.1


def test_training_is_deterministic_and_policies():
    def run(policy, patience=2):
        rng = np.random.default_rng(1)
        model = UNet(UNetConfig(levels=2, base_filters=2, input_hw=(16, 16)), rng)
        cfg = TrainConfig(lr=5e-2, batch_size=4, max_epochs=6, early_stop_patience=patience,
                          checkpoint_policy=policy, seed=3)
        return train_model(model, _blob_set(np.random.default_rng(2), 8), _blob_set(np.random.default_rng(3), 4), cfg)

    a, sa = run("final_epoch")
    b, _ = run("final_epoch")
    assert a.to_bytes() == b.to_bytes()
    c, sc = run("best_val", patience=5)
    assert c.epoch == sc["best_epoch"]
    assert sc["best_val_loss"] == pytest.approx(min(c.history["val_loss"]))
    assert sa["stop_epoch"] <= 6 and len(a.history["train_loss"]) == sa["stop_epoch"]
    assert sa["initial_val_loss"] is not None


def test_early_stopping_triggers():
    rng = np.random.default_rng(5)
    model = UNet(UNetConfig(levels=2, base_filters=2, input_hw=(16, 16)), rng)
    cfg = TrainConfig(lr=1e-9, batch_size=4, max_epochs=20, early_stop_patience=2, augment=None)
    _, s = train_model(model, _blob_set(rng, 4), _blob_set(rng, 4), cfg)
    assert s["stop_epoch"] < 20


def test_train_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, early_stop_patience=5)
    with pytest.raises(ValueError):
        TrainConfig(checkpoint_policy="latest")
    cfg = TrainConfig(lr=3e-3, seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SliceSet(np.zeros((2, 4, 4)), np.zeros((2, 4, 5), dtype=bool))


def test_predict_probs_batches(rng):
    model = UNet(UNetConfig(levels=2, base_filters=2, input_hw=(8, 8)), rng)
    imgs = rng.random((5, 8, 8))
    assert np.allclose(predict_probs(model, imgs, batch_size=2), predict_probs(model, imgs, batch_size=5))
