from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from ae_locate.errors import FormatError, StructuralError, TrainingDiverged, UsageError
from ae_locate.nn import (
    SGD,
    AESLNet,
    Adam,
    Architecture,
    HyperParams,
    RMSprop,
    load_checkpoint,
    make_optimizer,
    mse_loss,
    predict,
    save_checkpoint,
    train,
    xavier_init,
)
from ae_locate.nn.layers import BatchNorm1D, Conv2D, Dense, Dropout, MaxPool2D, ReLU
from ae_locate.samples import SampleSet

from gradsuite import RTOL, SMALL_ARCH, check_all_layers, check_network
from oracles import conv2d_loops, rel_error

TINY = Architecture(image_size=16, conv_widths=(4, 4, 6, 8), branch_features=8, head_widths=(12, 6))


def _data(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return SampleSet(rng.random((n, 4, size, size)), rng.random((n, 2)), [f"e{i}" for i in range(n)])


# --- initialisation ------------------------------------------------------------

def test_xavier_variance_formula():
    assert np.var(xavier_init(1, 1, seed=0, shape=(200_000,))) == pytest.approx(1.0, rel=0.02)
    w = xavier_init(512, 256, seed=1)
    assert w.shape == (256, 512)
    assert np.var(w) == pytest.approx(2 / 768, rel=0.05)
    draws = xavier_init(512, 256, seed=2, shape=(100_000,))
    assert abs(np.var(draws) / (2 / 768) - 1) < 0.05


# --- layer forward oracles -----------------------------------------------------

def test_conv_identity_kernel():
    conv = Conv2D(1, 1, kernel=1, pad=0)
    conv.params["weight"][...] = 1.0
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 4))
    np.testing.assert_array_equal(conv.forward(x), x)


def test_conv_all_ones_hand_values():
    conv = Conv2D(1, 1, kernel=3, pad=1)
    conv.params["weight"][...] = 1.0
    out = conv.forward(np.ones((1, 1, 3, 3)))[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1), (1, 0)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    conv = Conv2D(3, 4, 3, stride, pad, rng=rng)
    conv.params["bias"] = rng.normal(size=4)
    x = rng.normal(size=(2, 3, 7, 6))
    ref = conv2d_loops(x, conv.params["weight"], conv.params["bias"], stride, pad)
    assert rel_error(conv.forward(x), ref) < 1e-6


def test_maxpool_forward_and_routing():
    x = np.array([[[[1.0, 3.0, 2.0, 2.0], [0.0, -1.0, 2.0, 1.0], [5.0, 5.0, 0.0, 0.0], [4.0, 5.0, 0.0, 0.0]]]])
    pool = MaxPool2D(2)
    np.testing.assert_array_equal(pool.forward(x)[0, 0], [[3.0, 2.0], [5.0, 0.0]])
    dx = pool.backward(np.ones((1, 1, 2, 2)))[0, 0]
    # ties: the first maximum in row-major window order takes the gradient
    np.testing.assert_array_equal(dx, [[0, 1, 1, 0], [0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0]])


def test_relu_passthrough_and_mse_zero():
    r = ReLU()
    x = np.abs(np.random.default_rng(1).normal(size=(3, 4))) + 0.1
    r.forward(x)
    np.testing.assert_array_equal(r.backward(np.ones_like(x)), 1.0)
    loss, g = mse_loss(x, x)
    assert loss == 0.0 and np.all(g == 0.0)


def test_backward_before_forward():
    with pytest.raises(UsageError):
        Dense(2, 2).backward(np.ones((1, 2)))


def test_dropout_statistics():
    d = Dropout(0.25)
    d.rng = np.random.default_rng(5)
    x = np.ones((200, 500))
    y = d.forward(x, train=True)
    zeros = int(np.sum(y == 0))
    n = x.size
    assert stats.binomtest(zeros, n, 0.25).pvalue > 0.01
    np.testing.assert_allclose(y[y != 0], 1 / 0.75)
    np.testing.assert_array_equal(d.forward(x, train=False), x)


def test_batchnorm_eval_guard_and_running_stats():
    bn = BatchNorm1D(3)
    bn.running_var = np.zeros(3)
    out = bn.forward(np.zeros((1, 3)))
    assert np.all(np.isfinite(out))
    bn = BatchNorm1D(3)
    x = np.random.default_rng(0).normal(2.0, 3.0, size=(50, 3))
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(0, ddof=1))


# --- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_layer_gradients(seed):
    worst = check_all_layers(seed)
    assert max(worst.values()) < RTOL, worst


@pytest.mark.parametrize("seed", range(10))
def test_network_gradients(seed):
    assert check_network(seed) < RTOL


@pytest.mark.parametrize("seed", range(3))
def test_shared_network_gradients(seed):
    assert check_network(seed, shared=True) < RTOL


# --- optimizers ----------------------------------------------------------------

def test_sgd_single_step():
    p = {"w": np.array([2.0])}
    SGD(0.1).step(p, {"w": np.array([0.5])})
    assert p["w"][0] == 2.0 - 0.1 * 0.5


def test_rmsprop_single_step():
    p = {"w": np.array([2.0])}
    g = 0.5
    RMSprop(0.01).step(p, {"w": np.array([g])})
    v = 0.1 * g * g
    assert p["w"][0] == 2.0 - 0.01 * g / (np.sqrt(v) + 1e-8)
    opt = RMSprop(0.01)
    p = {"w": np.array([1.0])}
    opt.step(p, {"w": np.array([1.0])})
    opt.step(p, {"w": np.array([-2.0])})
    v = 0.9 * 0.1 + 0.1 * 4.0
    w1 = 1.0 - 0.01 / (np.sqrt(0.1) + 1e-8)
    assert p["w"][0] == pytest.approx(w1 + 0.01 * 2.0 / (np.sqrt(v) + 1e-8), rel=1e-15)


def test_adam_first_step_is_lr_sized():
    p = {"w": np.array([1.0])}
    Adam(0.01).step(p, {"w": np.array([123.0])})
    assert p["w"][0] == pytest.approx(0.99, abs=1e-9)


def test_optimizer_registry():
    assert isinstance(make_optimizer("rmsprop", 1e-3), RMSprop)
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", 1e-3)


# --- model ---------------------------------------------------------------------

def test_default_shape_algebra_and_counts():
    arch = Architecture()
    assert arch.flat_features == 64 * 4 * 4 == 1024
    par, sh = AESLNet(arch, seed=0), AESLNet(replace(arch, shared=True), seed=0)
    branch = sum(a.size for a in par.branch_parameters(0).values())
    assert par.parameter_count() == sh.parameter_count() + 3 * branch
    kinds = [layer.kind for _, layer in par.branches[0].named_layers()]
    assert kinds.count("conv2d") == 4 and kinds.count("maxpool2d") == 4
    assert kinds.count("dropout") == 1 and kinds.count("fully_connected") == 1
    head = [layer.kind for _, layer in par.head.named_layers()]
    assert head.count("batch_norm") == 1 and head.count("fully_connected") == 5
    out = par.forward(np.random.default_rng(0).random((2, 4, 64, 64)))
    assert out.shape == (2, 2)


def test_wrong_input_shape():
    with pytest.raises(StructuralError):
        AESLNet(TINY).forward(np.zeros((1, 3, 16, 16)))
    with pytest.raises(StructuralError):
        Architecture(image_size=8)


def test_channel_permutation():
    x = np.random.default_rng(3).random((2, 4, 16, 16))
    perm = [2, 0, 3, 1]
    par = AESLNet(TINY, seed=1)
    assert not np.allclose(par.forward(x), par.forward(x[:, perm]))
    # the shared variant applies one branch to every channel: its branch features
    # permute with the input, so any change in output comes from the head alone
    sh = AESLNet(replace(TINY, shared=True), seed=1)
    f, fp = sh.features(x), sh.features(x[:, perm])
    nf = TINY.branch_features
    np.testing.assert_allclose(fp.reshape(2, 4, nf), f.reshape(2, 4, nf)[:, perm])


def test_eval_deterministic_and_zero_input():
    m = AESLNet(TINY, seed=2)
    x = np.random.default_rng(0).random((3, 4, 16, 16))
    np.testing.assert_array_equal(m.forward(x), m.forward(x))
    for p in m.parameters().values():
        if p.ndim == 1:
            p[...] = 0.0
    for _, layer in m.head.named_layers():
        if isinstance(layer, BatchNorm1D):
            layer.running_mean[...] = 0.0
            layer.running_var[...] = 0.0
    assert np.all(np.isfinite(m.forward(np.zeros((1, 4, 16, 16)))))


def test_branch_isolation():
    m = AESLNet(TINY, seed=4)
    x = np.random.default_rng(1).random((2, 4, 16, 16))
    before = m.forward(x)
    others = {k: v.copy() for i in (0, 2, 3) for k, v in m.branch_parameters(i).items()}
    for v in m.branch_parameters(1).values():
        v[...] = 0.0
    assert not np.allclose(m.forward(x), before)
    for k, v in others.items():
        np.testing.assert_array_equal(m.parameters()[k], v)


def test_predict_denormalises():
    m = AESLNet(TINY, seed=0)
    last = m.head.layers[-1][1]
    last.params["weight"][...] = 0.0
    last.params["bias"][...] = [0.5, 0.5]
    x = np.zeros((4, 16, 16))
    np.testing.assert_allclose(predict(m, x, 300.0, 300.0), [150.0, 150.0])
    last.params["bias"][...] = 0.0
    np.testing.assert_allclose(predict(m, x, 300.0, 300.0), [0.0, 0.0])


# --- training ------------------------------------------------------------------

def test_zero_learning_rate_keeps_parameters():
    m = AESLNet(TINY, seed=0)
    before = {k: v.copy() for k, v in m.parameters().items()}
    train(m, _data(10), HyperParams("rmsprop", 4, 0.0, 3), seed=0)
    for k, v in m.parameters().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_deterministic():
    hist = []
    for _ in range(2):
        m = AESLNet(TINY, seed=3)
        hist.append(train(m, _data(12), HyperParams("rmsprop", 5, 1e-3, 4), seed=9).loss_history)
    assert hist[0] == hist[1]


def test_single_sample_memorisation():
    data = _data(1, size=64, seed=7)
    m = AESLNet(Architecture(), seed=0)
    res = train(m, data, HyperParams("sgd", 1, 0.01, 200), seed=0)
    assert res.loss_history[-1] < 1e-3


def test_divergence_detected():
    m = AESLNet(TINY, seed=0)
    data = _data(8)
    data.y[:] = 1e200
    with pytest.raises(TrainingDiverged):
        train(m, data, HyperParams("sgd", 4, 1.0, 3), seed=0)


def test_hyperparams_validation():
    from ae_locate.errors import ParameterError

    with pytest.raises(ParameterError):
        HyperParams(batch_size=0)
    with pytest.raises(ParameterError):
        HyperParams(optimizer="nadam")
    with pytest.raises(ParameterError):
        HyperParams(schedule="cosine")


def test_step_schedule_milestones():
    hp = HyperParams(learning_rate=1.0, epochs=200)
    rates = [hp.learning_rate_at(e) for e in range(200)]
    assert rates[:140] == [1.0] * 140
    assert rates[140:180] == [0.3] * 40
    assert rates[180:] == [0.1] * 20
    flat = HyperParams(learning_rate=1.0, epochs=200, schedule="constant")
    assert all(flat.learning_rate_at(e) == 1.0 for e in range(200))


def test_train_applies_schedule():
    m = AESLNet(TINY, seed=0)
    res = train(m, _data(6), HyperParams("sgd", 3, 1e-3, 10), seed=0)
    assert res.optimizer.lr == pytest.approx(1e-4)


# --- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = AESLNet(TINY, seed=5)
    res = train(m, _data(10), HyperParams("rmsprop", 5, 1e-3, 2), seed=1)
    path = tmp_path / "m.aesl"
    save_checkpoint(path, m, res.optimizer)
    m2, opt = load_checkpoint(path)
    assert m2.arch == TINY
    x = _data(3, seed=4).x
    np.testing.assert_array_equal(m.predict_normalized(x), m2.predict_normalized(x))
    assert isinstance(opt, RMSprop) and opt.lr == res.optimizer.lr
    for k, v in res.optimizer.v.items():
        np.testing.assert_array_equal(opt.v[k], v)
    path.write_bytes(b"JUNK" + path.read_bytes()[4:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
