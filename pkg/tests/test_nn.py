import numpy as np
import pytest

from fairbound.mmd import KernelSpec
from fairbound.nn import (
    CODE_NORMS,
    SGD,
    CheckpointError,
    NetworkParams,
    NetworkSpec,
    StepDecay,
    backward,
    balanced_class_weights,
    composite_loss_and_grad,
    cross_entropy_loss,
    dumps_networks,
    forward,
    load_networks,
    loads_networks,
    loss_and_grad,
    normalize_codes,
    predict,
    save_networks,
    sgd_step,
    softmax,
    whiten,
)

KERNEL = KernelSpec("rq", 1.0, 2.0)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_grads(loss_fn, nets_and_grads, rng, n_coords=8, h=1e-5):
    errs = []
    for params, grads in nets_and_grads:
        arrays, garrays = params.arrays(), grads.arrays()
        for _ in range(n_coords):
            k = int(rng.integers(len(arrays)))
            p, g = arrays[k], garrays[k]
            idx = tuple(int(rng.integers(d)) for d in p.shape)
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            errs.append(rel_err((up - down) / (2 * h), g[idx]))
    return max(errs)


def test_zero_network_outputs_zero():
    spec = NetworkSpec((4, 5, 3))
    params = spec.init()
    params = NetworkParams([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases])
    assert np.all(predict(spec, params, np.ones((2, 4))) == 0)


def test_identity_layer():
    spec = NetworkSpec((3, 3))
    X = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(predict(spec, NetworkParams([np.eye(3)], [np.zeros(3)]), X), X)


def test_deterministic_init_and_forward():
    spec = NetworkSpec((6, 8, 2), seed=4)
    X = np.random.default_rng(1).normal(size=(10, 6))
    assert np.array_equal(predict(spec, spec.init(), X), predict(spec, spec.init(), X))


def test_spec_validation():
    for bad in (dict(widths=(3,)), dict(widths=(3, 0)), dict(widths=(3, 2), activation="gelu"),
                dict(widths=(3, 2), skip_every=-1)):
        with pytest.raises(ValueError):
            NetworkSpec(**bad)
    with pytest.raises(ValueError):
        NetworkSpec((3, 4, 2)).init().check(NetworkSpec((3, 5, 2)))


def test_seven_net_layout():
    spec = NetworkSpec.seven_net(4, 2)
    assert spec.n_layers == 7
    assert [spec.skip_source(l) for l in range(1, 7)] == [None, None, None, 2, None, 4]


@pytest.mark.parametrize("activation", ["relu", "tanh", "identity"])
def test_mse_gradient(activation):
    rng = np.random.default_rng(2)
    spec = NetworkSpec((5, 7, 7, 7, 3), activation=activation, skip_every=2, seed=3)
    params = spec.init()
    X, T = rng.normal(size=(12, 5)), rng.normal(size=(12, 3))
    _, grads = loss_and_grad(spec, params, X, T)
    assert check_grads(lambda: loss_and_grad(spec, params, X, T)[0], [(params, grads)], rng) < 1e-4


def test_weighted_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    spec = NetworkSpec((4, 6, 3), activation="tanh", seed=1)
    params = spec.init()
    X, y = rng.normal(size=(20, 4)), rng.integers(0, 3, 20)
    w = balanced_class_weights(y, 3)
    _, grads = loss_and_grad(spec, params, X, y, "cross_entropy", w)
    fn = lambda: loss_and_grad(spec, params, X, y, "cross_entropy", w)[0]
    assert check_grads(fn, [(params, grads)], rng) < 1e-4


def test_cross_entropy_values():
    value, grad = cross_entropy_loss(np.zeros((2, 2)), [0, 1])
    assert value == pytest.approx(np.log(2))
    assert np.allclose(grad, [[-0.25, 0.25], [0.25, -0.25]])
    assert np.allclose(softmax(np.array([[0.0, np.log(3.0)]])), [[0.25, 0.75]])
    assert np.allclose(balanced_class_weights([0, 0, 0, 1], 3), [1 / 3, 1.0, 0.0])


def _composite_setup(seed=1):
    rng = np.random.default_rng(seed)
    X, s = rng.normal(size=(20, 5)), rng.integers(0, 2, 20)
    s[:2] = [0, 1]
    enc_spec = NetworkSpec((5, 7, 7, 3), skip_every=2, seed=1, output_activation="tanh")
    dec_spec = NetworkSpec((3, 6, 5), activation="tanh", seed=2)
    return rng, X, s, enc_spec, enc_spec.init(), dec_spec, dec_spec.init()


@pytest.mark.parametrize("code_norm", CODE_NORMS)
def test_composite_gradient(code_norm):
    rng, X, s, es, enc, ds, dec = _composite_setup()

    def total():
        return composite_loss_and_grad(es, enc, ds, dec, X, s, 3.0, KERNEL, 0.01, code_norm=code_norm)[0].total

    _, ge, gd = composite_loss_and_grad(es, enc, ds, dec, X, s, 3.0, KERNEL, 0.01, code_norm=code_norm)
    assert check_grads(total, [(enc, ge), (dec, gd)], rng, n_coords=25) < 1e-4


def test_zero_lambda_is_pretext_only():
    _, X, s, es, enc, ds, dec = _composite_setup()
    loss, ge, gd = composite_loss_and_grad(es, enc, ds, dec, X, s, 0.0, KERNEL)
    assert loss.total == loss.pretext
    # same chain written out by hand
    ec = forward(es, enc, X)
    dc = forward(ds, dec, ec.output)
    g_rec = 2.0 * (dc.output - X) / len(X)
    gd_ref, g_code = backward(ds, dec, dc, g_rec)
    ge_ref, _ = backward(es, enc, ec, g_code)
    for a, b in zip(ge.arrays() + gd.arrays(), ge_ref.arrays() + gd_ref.arrays()):
        assert np.array_equal(a, b)


def test_identity_autoencoder_has_zero_reconstruction_loss():
    X = np.random.default_rng(0).normal(size=(6, 3))
    s = np.array([0, 1] * 3)
    spec = NetworkSpec((3, 3))
    eye = NetworkParams([np.eye(3)], [np.zeros(3)])
    loss, ge, gd = composite_loss_and_grad(spec, eye, spec, eye, X, s, 0.0, KERNEL)
    assert loss.pretext == 0.0
    assert all(np.all(a == 0) for a in ge.arrays() + gd.arrays())


def test_whitened_codes_have_identity_covariance():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(500, 3)) @ np.array([[3.0, 0, 0], [1.0, 0.1, 0], [0, 0.5, 0.2]])
    Zw, _ = whiten(Z)
    cov = Zw.T @ Zw / len(Zw)
    assert np.allclose(Zw.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(cov, np.eye(3), atol=1e-3)
    # the ridge only ever shrinks nearly flat directions
    Zw, _ = whiten(Z * np.array([1.0, 1.0, 1e-3]))
    assert np.all(np.linalg.eigvalsh(Zw.T @ Zw / len(Zw)) <= 1 + 1e-9)
    with pytest.raises(ValueError):
        normalize_codes(Z, "pca")


def test_sgd_examples():
    p = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
    g = NetworkParams([np.array([[2.0]])], [np.array([0.0])])
    assert sgd_step(p, g, 0.0).weights[0][0, 0] == 1.0
    assert sgd_step(p, g, 0.5).weights[0][0, 0] == 0.0


def test_quadratic_bowl_descends():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    T = X @ rng.normal(size=(3, 2))
    spec = NetworkSpec((3, 2))
    params = spec.init()
    losses = []
    for _ in range(100):
        value, grads = loss_and_grad(spec, params, X, T)
        losses.append(value)
        params = sgd_step(params, grads, 0.05)
    assert np.all(np.diff(losses) <= 0)


def test_momentum_and_decay():
    p = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
    g = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
    opt = SGD(p, momentum=0.5)
    opt.step(g, 0.1)
    opt.step(g, 0.1)
    assert p.weights[0][0, 0] == pytest.approx(1.0 - 0.1 - 0.15)
    decay = StepDecay(1.0, (3, 5))
    assert [decay(e) for e in (0, 3, 5)] == [1.0, 0.1, pytest.approx(0.01)]
    with pytest.raises(ValueError):
        SGD(p, momentum=1.0)


def test_checkpoint_round_trip(tmp_path):
    nets = [(NetworkSpec((3, 4, 2), activation="tanh", seed=5), None), (NetworkSpec((2, 3), seed=6), None)]
    nets = [(spec, spec.init()) for spec, _ in nets]
    path = tmp_path / "m.fbnn"
    save_networks(path, nets)
    back = load_networks(path)
    assert [spec for spec, _ in back] == [spec for spec, _ in nets]
    for (_, a), (_, b) in zip(nets, back):
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    blob = dumps_networks(nets)
    assert dumps_networks(loads_networks(blob)) == blob
    with pytest.raises(CheckpointError):
        loads_networks(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        loads_networks(blob[:-3])
