import json
import math

import numpy as np
import pytest

from skillsched import numerics
from skillsched.backend import available_backends, get_kernels
from skillsched.errors import ConfigurationError
from skillsched.numerics import AdamState, GradTape, Mlp, adam_step, grad_check
from skillsched.seeding import make_rng


def ref_forward(sizes, params, x):
    """Independent straight-line re-implementation of the forward pass."""
    off = 0
    h = list(x)
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        z = []
        for j in range(n_out):
            s = 0.0
            for i in range(n_in):
                s += params[off + j * n_in + i] * h[i]
            z.append(s)
        off += n_in * n_out
        for j in range(n_out):
            z[j] += params[off + j]
        off += n_out
        if l < len(sizes) - 2:
            h = [math.tanh(v) for v in z]
        else:
            h = z
    return np.array(h)


def test_zero_net_zero_output():
    net = Mlp((3, 4, 2), np.zeros(numerics.kernels.param_count((3, 4, 2)), dtype=float))
    assert np.all(net.forward(np.array([1.0, -2.0, 3.0])) == 0.0)


def test_affine_1_1():
    net = Mlp((1, 1), np.array([2.0, 1.0]))
    assert net.forward(np.array([3.0]))[0] == 7.0


def test_forward_matches_reference():
    rng = make_rng(1234)
    sizes = (4, 8, 2)
    net = Mlp.create(sizes, rng)
    x = rng.normal(size=4)
    got = net.forward(x)
    want = ref_forward(sizes, net.params, x)
    assert np.max(np.abs(got - want)) < 1e-12


def test_forward_pure():
    rng = make_rng(5)
    net = Mlp.create((6, 16, 3), rng)
    x = rng.normal(size=6)
    a = net.forward(x)
    b = net.forward(x)
    assert np.array_equal(a, b)


def test_dimension_mismatch():
    rng = make_rng(0)
    net = Mlp.create((4, 2), rng)
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros(5))
    with pytest.raises(ConfigurationError):
        Mlp((4, 2), np.zeros(3))


def test_backward_affine_identity():
    net = Mlp((1, 1), np.array([1.0, 0.0]))
    tape = GradTape(net)
    x = np.array([[2.5]])
    y, cache = net.forward_batch(x)
    dx = net.backward_batch(cache, np.array([[1.0]]), tape)
    assert tape.grad[0] == 2.5  # weight grad = input
    assert tape.grad[1] == 1.0  # bias grad
    assert dx[0, 0] == 1.0


def test_backward_zero_grad_zero_tape():
    rng = make_rng(7)
    net = Mlp.create((3, 5, 2), rng)
    tape = GradTape(net)
    _, cache = net.forward_batch(rng.normal(size=(4, 3)))
    net.backward_batch(cache, np.zeros((4, 2)), tape)
    assert np.all(tape.grad == 0.0)


def test_backward_matches_finite_differences():
    rng = make_rng(99)
    sizes = (6, 16, 16, 3)
    net = Mlp.create(sizes, rng)
    x = rng.normal(size=(5, 6))
    v = rng.normal(size=(5, 3))  # fixed projection makes the loss scalar

    def loss_fn(params):
        m = Mlp(sizes, params)
        y, cache = m.forward_batch(x)
        tape = GradTape(m)
        m.backward_batch(cache, v, tape)
        return float(np.sum(y * v)), tape.grad

    assert grad_check(loss_fn, net.params.copy()) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = make_rng(11)
    net = Mlp.create((4, 8, 2), rng)
    x0 = rng.normal(size=4)
    v = rng.normal(size=2)
    y, cache = net.forward_batch(x0[None, :])
    tape = GradTape(net)
    dx = net.backward_batch(cache, v[None, :], tape)[0]
    h = 1e-6
    for i in range(4):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        numeric = (np.dot(net.forward(xp), v) - np.dot(net.forward(xm), v)) / (2 * h)
        assert abs(numeric - dx[i]) < 1e-6 * max(1.0, abs(numeric))


def test_adam_zero_gradient_noop():
    rng = make_rng(3)
    net = Mlp.create((2, 2), rng)
    before = net.params.copy()
    tape = GradTape(net)
    state = AdamState.for_net(net, lr=0.1)
    adam_step(net.params, tape, state)
    assert np.max(np.abs(net.params - before)) < 1e-12
    assert state.step == 1


def test_adam_first_step_bias_corrected():
    params = np.array([0.0])
    state = AdamState(lr=0.1, m=np.zeros(1), v=np.zeros(1))
    tape = GradTape.__new__(GradTape)
    tape.sizes = None
    tape.grad = np.array([1.0])
    state.step += 1
    numerics.kernels.adam_step(params, tape.grad, state.m, state.v, state.step,
                               state.lr, state.beta1, state.beta2, state.eps)
    # hand evaluation: mhat = 1, vhat = 1 -> step = -lr / (1 + eps)
    assert abs(params[0] - (-0.1 / (1 + 1e-8))) < 1e-15


def test_adam_symmetry():
    params = np.array([0.3, 0.3])
    g = np.array([0.7, 0.7])
    m, v = np.zeros(2), np.zeros(2)
    for step in range(1, 50):
        numerics.kernels.adam_step(params, g, m, v, step, 1e-2, 0.9, 0.999, 1e-8)
    assert params[0] == params[1]


def test_grad_check_quadratic_exact():
    def loss_fn(p):
        return 0.5 * float(np.dot(p, p)), p.copy()

    rng = make_rng(21)
    assert grad_check(loss_fn, rng.normal(size=10)) < 1e-8


def test_grad_check_gaussian_log_prob_loss():
    rng = make_rng(42)
    sizes = (3, 12, 4)  # net emits (mean, log_std) for a 2-d action
    net = Mlp.create(sizes, rng)
    x = rng.normal(size=(6, 3))
    a = rng.normal(size=(6, 2))

    def loss_fn(params):
        m = Mlp(sizes, params)
        y, cache = m.forward_batch(x)
        mean, log_std = y[:, :2], y[:, 2:]
        std = np.exp(log_std)
        zscore = (a - mean) / std
        lp = np.sum(-0.5 * zscore**2 - log_std - 0.5 * math.log(2 * math.pi), axis=1)
        loss = -float(np.mean(lp))
        dmean = -(zscore / std) / len(x)
        dlogstd = -(zscore**2 - 1.0) / len(x)
        tape = GradTape(m)
        m.backward_batch(cache, np.concatenate([dmean, dlogstd], axis=1), tape)
        return loss, tape.grad

    assert grad_check(loss_fn, net.params.copy()) < 1e-4


def test_grad_check_cross_entropy_loss():
    rng = make_rng(17)
    sizes = (4, 10, 5)
    net = Mlp.create(sizes, rng)
    x = rng.normal(size=(7, 4))
    target = rng.integers(0, 5, size=7)
    onehot = np.eye(5)[target]

    def loss_fn(params):
        m = Mlp(sizes, params)
        y, cache = m.forward_batch(x)
        y = y - y.max(axis=1, keepdims=True)
        logp = y - np.log(np.sum(np.exp(y), axis=1, keepdims=True))
        loss = -float(np.mean(np.sum(onehot * logp, axis=1)))
        dlogits = (np.exp(logp) - onehot) / len(x)
        tape = GradTape(m)
        m.backward_batch(cache, dlogits, tape)
        return loss, tape.grad

    assert grad_check(loss_fn, net.params.copy()) < 1e-4


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = make_rng(8)
    net = Mlp.create((5, 9, 2), rng)
    path = str(tmp_path / "net.json")
    numerics.write_json(path, numerics.mlp_to_doc(net))
    doc = numerics.read_json(path)
    assert doc["format_version"] == 1
    loaded = numerics.mlp_from_doc(doc)
    assert loaded.sizes == net.sizes
    assert np.array_equal(loaded.params, net.params)


def test_checkpoint_rejects_unknown_version():
    with pytest.raises(ConfigurationError):
        numerics.mlp_from_doc({"format_version": 99, "sizes": [1, 1], "params": [0, 0]})


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled backend absent")
def test_backends_agree():
    kn, kc = get_kernels("numpy"), get_kernels("compiled")
    rng = make_rng(1001)
    sizes = (6, 32, 32, 4)
    p = np.ascontiguousarray(rng.normal(size=kn.param_count(sizes)))
    x = np.ascontiguousarray(rng.normal(size=(9, 6)))
    dy = np.ascontiguousarray(rng.normal(size=(9, 4)))
    yn, an = kn.mlp_forward(p, sizes, x)
    yc, ac = kc.mlp_forward(p, sizes, x)
    assert np.max(np.abs(yn - yc)) < 1e-12
    gn, gc = np.zeros_like(p), np.zeros_like(p)
    dxn = kn.mlp_backward(p, sizes, x, an, dy, gn)
    dxc = kc.mlp_backward(p, sizes, x, ac, dy, gc)
    assert np.max(np.abs(gn - gc)) < 1e-12
    assert np.max(np.abs(dxn - dxc)) < 1e-12
