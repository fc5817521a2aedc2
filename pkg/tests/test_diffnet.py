import math

import numpy as np
import pytest

from hypflow import diffnet as D
from hypflow import lorentz as L
from hypflow.errors import DimensionError, NumericError, TapeStateError


def tape_grad(f, *args):
    tape = D.Tape()
    leaves = [tape.leaf(a) for a in args]
    out = D.reduce_sum(f(*leaves))
    tape.backward(out)
    return [tape.grad(leaf) for leaf in leaves]


def fd_grad(f, *args, h=1e-6):
    grads = []
    for k, a in enumerate(args):
        a = np.array(a, dtype=np.float64)
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus, minus = [np.array(x, dtype=np.float64) for x in args], \
                [np.array(x, dtype=np.float64) for x in args]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (np.sum(f(*plus)) - np.sum(f(*minus))) / (2 * h)
        grads.append(g)
    return grads


UNARY = {
    "exp": (D.exp, (-3, 3)),
    "log": (D.log, (0.1, 5)),
    "sqrt": (D.sqrt, (0.1, 5)),
    "tanh": (D.tanh, (-3, 3)),
    "sinh": (D.sinh, (-3, 3)),
    "cosh": (D.cosh, (-3, 3)),
    "arccosh": (D.arccosh, (1.1, 5)),
    "logistic": (D.logistic, (-6, 6)),
    "log_logistic": (D.log_logistic, (-6, 6)),
    "cosh_sqrt": (D.cosh_sqrt, (0.0, 9)),
    "sinhc_sq": (D.sinhc_sq, (0.0, 9)),
    "asinhc_sq": (D.asinhc_sq, (0.0, 9)),
    "log_sinhc_sq": (D.log_sinhc_sq, (0.0, 9)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    f, (lo, hi) = UNARY[name]
    x = np.random.default_rng(abs(hash(name)) % 2 ** 32).uniform(lo, hi, 100)
    x = np.maximum(x, lo + 1e-3)  # keep central differences inside the domain
    (g,) = tape_grad(f, x)
    (g_fd,) = fd_grad(f, x)
    np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-7)


def test_smooth_series_primitives_values():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    u = [0.0, 1e-9, 1e-7, 9.9e-7, 1.01e-6, 0.25, 4.0, 900.0]
    rs = [mpmath.sqrt(mpmath.mpf(x)) for x in u]

    def ref(fn):
        return np.array([float(fn(r)) if r > 0 else 1.0 for r in rs])

    sinhc = ref(lambda r: mpmath.sinh(r) / r)
    np.testing.assert_allclose(D.cosh_sqrt(np.array(u)), ref(mpmath.cosh), rtol=1e-14)
    np.testing.assert_allclose(D.sinhc_sq(np.array(u)), sinhc, rtol=1e-14)
    np.testing.assert_allclose(D.asinhc_sq(np.array(u)), ref(lambda r: mpmath.asinh(r) / r),
                               rtol=1e-14)
    logs = np.array([float(mpmath.log(mpmath.sinh(r) / r)) if r > 0 else 0.0 for r in rs])
    np.testing.assert_allclose(D.log_sinhc_sq(np.array(u)), logs, rtol=1e-8, atol=1e-300)
    assert np.isfinite(D.log_sinhc_sq(np.array(1e6)))


def test_series_derivatives_at_zero():
    # d/du at 0: cosh(sqrt u) -> 1/2, sinh(sqrt u)/sqrt u -> 1/6,
    # asinh(sqrt u)/sqrt u -> -1/6, log(sinh(sqrt u)/sqrt u) -> 1/6
    expected = {D.cosh_sqrt: 0.5, D.sinhc_sq: 1 / 6, D.asinhc_sq: -1 / 6, D.log_sinhc_sq: 1 / 6}
    for f, slope in expected.items():
        (g,) = tape_grad(f, np.zeros(1))
        assert g[0] == pytest.approx(slope, rel=1e-12)


def test_binary_and_structural_ops():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0.5, 2, (4, 3)), rng.uniform(0.5, 2, (3,))
    mask = a > 1.2
    ops = [
        D.add, D.sub, D.mul, D.div,
        lambda x, y: D.dot(x, y),
        lambda x, y: D.where(mask, x, y),
        lambda x, y: D.concat([x, D.broadcast_to(y, (4, 3))], axis=0),
        lambda x, y: D.getitem(x, (slice(1, 3), [0, 0, 2])) * D.getitem(y, 1),
        lambda x, y: D.mean(D.clamp(x * y, lo=0.6, hi=2.5), axis=0),
        lambda x, y: D.reduce_sum(x, axis=0, keepdims=True) - y,
        lambda x, y: -x / y,
    ]
    for f in ops:
        for g, g_fd in zip(tape_grad(f, a, b), fd_grad(f, a, b)):
            np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)
    m = rng.standard_normal((3, 5))
    for g, g_fd in zip(tape_grad(D.matmul, a, m), fd_grad(D.matmul, a, m)):
        np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)


def test_dot_gradient_example():
    gx, gy = tape_grad(lambda x, y: x * y, np.array(3.0), np.array(5.0))
    assert gx == 5.0 and gy == 3.0


def test_numpy_passthrough_without_tape():
    x = np.array([0.5, 1.0])
    out = D.tanh(D.mul(x, 2.0))
    assert isinstance(out, np.ndarray)
    np.testing.assert_allclose(out, np.tanh(2 * x))


def test_tape_errors():
    tape = D.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(TapeStateError):
        tape.grad(x)
    with pytest.raises(DimensionError):
        tape.backward(D.mul(x, 2.0))
    other = D.Tape()
    with pytest.raises(TapeStateError):
        other.backward(D.reduce_sum(x))


def test_unused_leaf_gets_zero_grad():
    tape = D.Tape()
    x, y = tape.leaf(2.0), tape.leaf(np.ones(2))
    tape.backward(D.mul(x, x))
    assert tape.grad(x) == 4.0
    np.testing.assert_array_equal(tape.grad(y), np.zeros(2))


def test_exp_log_round_trip_jacobian_is_identity():
    rng = np.random.default_rng(4)
    x = L.lift_to_hyperboloid(rng.standard_normal(3))
    v = L.tangent_projection(x, rng.standard_normal(4))
    jac = np.zeros((4, 4))
    for i in range(4):
        (g,) = tape_grad(lambda w: D.getitem(L.log_map(x, L.exp_map(x, w)), i), v)
        jac[i] = g
    # derivative of log_x(exp_x(v)) along tangent directions is the identity;
    # on the normal direction x it is whatever the tangent projection does
    basis = L.orthonormal_tangent_basis(x)
    np.testing.assert_allclose(basis @ jac.T, basis, atol=1e-4)


def test_mlp_basics():
    rng = np.random.default_rng(0)
    net = D.Mlp.init([3, 8, 2], rng)
    assert net.num_params == 3 * 8 + 8 + 8 * 2 + 2
    np.testing.assert_array_equal(net(rng.standard_normal((5, 3))), np.zeros((5, 2)))
    zero = D.Mlp([2, 2], [np.zeros((2, 2))], [np.zeros(2)])
    np.testing.assert_array_equal(zero(np.ones((1, 2))), np.zeros((1, 2)))
    ident = D.Mlp([2, 2], [np.eye(2)], [np.zeros(2)])
    x = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(ident(x), x)
    with pytest.raises(DimensionError):
        net(np.ones((1, 4)))
    with pytest.raises(DimensionError):
        D.Mlp.init([3], rng)


def test_mlp_parameter_gradients():
    rng = np.random.default_rng(1)
    net = D.Mlp.init([3, 8, 2], rng, zero_last=False)
    x = rng.standard_normal((6, 3))
    params = net.parameters()

    def f(*ps):
        return net(x, list(ps))

    for g, g_fd in zip(tape_grad(f, *params), fd_grad(f, *params, h=1e-5)):
        np.testing.assert_allclose(g, g_fd, rtol=1e-4, atol=1e-9)


def test_adam_zero_gradient_keeps_parameters():
    p = [np.array([1.0, -2.0])]
    out = D.adam_step(D.AdamState(), p, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step_closed_form():
    state = D.AdamState(lr=0.01)
    g = np.array([0.5, -2.0, 1e-3])
    out = D.adam_step(state, [np.zeros(3)], [g])[0]
    np.testing.assert_allclose(out, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_quadratic_bowl():
    state = D.AdamState(lr=1e-2)
    w = np.array([0.6, -0.8])
    for step in range(2000):
        (w,) = D.adam_step(state, [w], [2.0 * w])
        if np.linalg.norm(w) < 1e-3:
            break
    assert np.linalg.norm(w) < 1e-3


def test_adam_errors():
    with pytest.raises(DimensionError):
        D.adam_step(D.AdamState(), [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(NumericError):
        D.adam_step(D.AdamState(), [np.zeros(2)], [np.array([0.0, math.nan])])
