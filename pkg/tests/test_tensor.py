import numpy as np
import pytest

from litesam.tensor import (Conv2d, ContractError, Tensor, count_macs_ctx, finite_diff_check,
                            ltsr, ops, precision)
from litesam.tensor.ltsr import LtsrError

from oracles import avg_pool_loops, conv2d_loops, dyadic


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- conv2d --------------------------------------------------------------------
def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.conv2d(t64(x), t64(np.ones((1, 1, 1, 1))), t64(np.zeros(1)))
    assert np.array_equal(out.data, x)


def test_conv_zero_weight_gives_bias():
    x = np.random.default_rng(0).normal(size=(1, 2, 5, 5))
    out = ops.conv2d(t64(x), t64(np.zeros((3, 2, 3, 3))), t64(np.array([1.5, -2.0, 0.25])), padding=1)
    for o, b in enumerate([1.5, -2.0, 0.25]):
        assert np.all(out.data[0, o] == b)


def test_conv_ramp_matches_loops():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 3, 3))
    out = ops.conv2d(t64(x), t64(w), None, padding=1)
    assert np.array_equal(out.data, conv2d_loops(x, w, None, 1, 1, 1))


@pytest.mark.parametrize("stride,pad,groups,cin,cout,k", [
    (1, 0, 1, 2, 3, 3), (1, 1, 1, 3, 2, 3), (2, 1, 1, 2, 2, 3), (2, 3, 1, 3, 4, 7),
    (1, 0, 1, 4, 8, 1), (1, 1, 4, 4, 4, 3), (1, 1, 2, 4, 6, 3), (3, 2, 1, 1, 1, 5),
])
def test_conv_bitwise_vs_loops_random(stride, pad, groups, cin, cout, k):
    rng = np.random.default_rng(stride * 100 + pad * 10 + groups)
    for _ in range(20):
        h, w = rng.integers(k, 9, size=2)
        x = dyadic(rng, (2, cin, h, w))
        wt = dyadic(rng, (cout, cin // groups, k, k))
        b = dyadic(rng, (cout,))
        out = ops.conv2d(t64(x), t64(wt), t64(b), stride=stride, padding=pad, groups=groups)
        assert np.array_equal(out.data, conv2d_loops(x, wt, b, stride, pad, groups))


def test_conv_shape_errors():
    with pytest.raises(ContractError):
        ops.conv2d(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((2, 2, 3, 3))))
    with pytest.raises(ContractError):
        ops.conv2d(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((2, 3, 3, 3))), groups=2)
    with pytest.raises(ContractError):
        ops.conv2d(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 5, 5))))


# -- avg_pool2d ----------------------------------------------------------------
def test_pool_constant_and_identity():
    x = np.full((1, 2, 6, 6), 3.25)
    assert np.all(ops.avg_pool2d(t64(x), 3).data == 3.25)
    y = np.random.default_rng(1).normal(size=(1, 2, 5, 5))
    assert np.array_equal(ops.avg_pool2d(t64(y), 1).data, y)


def test_pool_ramp_matches_loops():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    assert np.array_equal(ops.avg_pool2d(t64(x), 3, 1, 1).data, avg_pool_loops(x, 3, 1, 1))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (5, 1, 2), (7, 1, 3), (2, 2, 0), (4, 4, 0), (3, 2, 1)])
def test_pool_bitwise_vs_loops_random(k, stride, pad):
    rng = np.random.default_rng(k * 10 + stride)
    for _ in range(20):
        h, w = rng.integers(max(1, k - 2 * pad), 9, size=2)
        x = dyadic(rng, (1, 2, h, w))
        out = ops.avg_pool2d(t64(x), k, stride, pad)
        assert np.array_equal(out.data, avg_pool_loops(x, k, stride, pad))


def test_pool_kernel_too_large():
    with pytest.raises(ContractError):
        ops.avg_pool2d(t64(np.zeros((1, 1, 3, 3))), 7)


# -- norms, activations --------------------------------------------------------
def test_group_norm_examples():
    x = np.full((1, 4, 2, 2), 2.0)
    out = ops.group_norm(t64(x), 2, t64(np.ones(4)), t64(np.zeros(4)))
    assert np.all(out.data == 0)
    r = np.random.default_rng(2).normal(size=(2, 4, 2, 2))
    out = ops.group_norm(t64(r), 2, t64(np.zeros(4)), t64(np.full(4, 0.7)))
    assert np.all(out.data == 0.7)
    out = ops.group_norm(t64(r), 2, t64(np.ones(4)), t64(np.zeros(4))).data
    g = out.reshape(2, 2, -1)
    assert np.allclose(g.mean(-1), 0, atol=1e-5)
    assert np.allclose(g.var(-1), 1, atol=1e-4)


def test_group_norm_channel_error():
    with pytest.raises(ContractError):
        ops.group_norm(t64(np.zeros((1, 3, 2, 2))), 2, t64(np.ones(3)), t64(np.zeros(3)))


def test_gelu_softmax_matmul():
    assert ops.gelu(t64(np.zeros(3))).data.tolist() == [0, 0, 0]
    s = ops.softmax(t64(np.full((2, 5), 3.0)), -1).data
    assert np.allclose(s, 0.2, atol=1e-15)
    a = np.random.default_rng(3).normal(size=(4, 3))
    assert np.array_equal(ops.matmul(t64(np.eye(4)), t64(a)).data, a)


def test_softmax_rows_property():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.normal(scale=rng.uniform(0.1, 30), size=(rng.integers(1, 6), rng.integers(1, 9)))
        s = ops.softmax(t64(x), -1).data
        assert np.all(np.abs(s.sum(-1) - 1) <= 1e-6)
        assert np.all((s >= 0) & (s <= 1))


def test_contract_errors():
    with pytest.raises(ContractError):
        ops.softmax(t64(np.zeros((2, 2))), 3)
    with pytest.raises(ContractError):
        ops.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))
    x = t64(np.ones(3), grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


# -- backward ------------------------------------------------------------------
def test_backward_examples():
    x = t64(np.random.default_rng(5).normal(size=(3, 4)), grad=True)
    ops.sum(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))
    x.zero_grad()
    (ops.sum(x * x) * 0.5).backward()
    assert np.array_equal(x.grad, x.data)


def test_finite_diff_examples():
    rng = np.random.default_rng(6)
    with precision(np.float64):
        # dyadic inputs and a power-of-two step keep the central difference exact
        x = t64(dyadic(rng, (2, 3)), grad=True)
        assert finite_diff_check(lambda t: ops.sum(t), x, h=2.0 ** -10) == 0.0
        x = t64(rng.normal(size=(2, 3)), grad=True)
        assert finite_diff_check(lambda t: ops.sum(t * t) * 0.5, x, h=1e-5) < 1e-8
        c = Conv2d(2, 2, 3, rng, padding=1)
        gamma, beta = t64(np.ones(2)), t64(np.zeros(2))
        img = t64(rng.normal(size=(1, 2, 5, 5)), grad=True)
        w = t64(rng.normal(size=(1, 2, 5, 5)))
        f = lambda t: ops.sum(ops.gelu(ops.group_norm(c(t), 1, gamma, beta)) * w)
        assert finite_diff_check(f, img, h=1e-4) < 1e-4


def test_backward_is_deterministic():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(1, 3, 6, 6))
    w0 = rng.normal(size=(4, 3, 3, 3))
    grads = []
    for _ in range(2):
        x, w = t64(x0, grad=True), t64(w0, grad=True)
        y = ops.softmax(ops.reshape(ops.conv2d(x, w, padding=1), (4, 36)), -1)
        ops.sum(y * y).backward()
        grads.append((x.grad.copy(), w.grad.copy()))
    assert np.array_equal(grads[0][0], grads[1][0]) and np.array_equal(grads[0][1], grads[1][1])


def test_mac_counter_conv():
    x = Tensor(np.zeros((1, 4, 8, 8), np.float32))
    c = Conv2d(4, 8, 3, np.random.default_rng(0), padding=1)
    with count_macs_ctx() as counter:
        c(x)
    assert counter.total == 1 * 8 * 8 * 8 * 4 * 3 * 3


# -- LTSR ----------------------------------------------------------------------
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_ltsr_roundtrip(tmp_path, dtype):
    rng = np.random.default_rng(8)
    for shape in [(), (1,), (3, 4), (2, 1, 5, 3)]:
        a = rng.normal(size=shape).astype(dtype)
        b = ltsr.loads(ltsr.dumps(a))
        assert b.dtype == dtype and b.shape == a.shape and np.array_equal(a, b)
    ltsr.save(tmp_path / "a.ltsr", a)
    assert np.array_equal(ltsr.load(tmp_path / "a.ltsr"), a)


def test_ltsr_header_layout():
    buf = ltsr.dumps(np.array([[1.0, 2.0]], dtype=np.float64))
    assert buf[:4] == b"LTSR" and buf[4] == 1 and buf[5] == 1 and buf[6] == 2
    assert int.from_bytes(buf[7:15], "little") == 1 and int.from_bytes(buf[15:23], "little") == 2
    assert len(buf) == 23 + 16


def test_ltsr_errors():
    good = ltsr.dumps(np.zeros(3, np.float32))
    for bad in (b"XXXX" + good[4:], good[:4] + b"\x02" + good[5:], good[:5] + b"\x07" + good[6:],
                good[:-1], good[:8]):
        with pytest.raises(LtsrError):
            ltsr.loads(bad)
    with pytest.raises(LtsrError):
        ltsr.dumps(np.zeros(2, np.complex64))
