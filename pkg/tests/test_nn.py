import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqdetect import kernels
from vqdetect import nn
from vqdetect.nn import Tensor, Parameter

from oracles import check_module_grads, conv2d_loops, rel_error


@pytest.fixture
def f64():
    nn.set_default_dtype(np.float64)
    yield
    nn.set_default_dtype(np.float32)


def t64(a, grad=False):
    return Parameter(a, dtype=np.float64) if grad else Tensor(a, dtype=np.float64)


# conv2d ---------------------------------------------------------------------

def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).random((2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c] = 1.0
    out = nn.conv2d(t64(x), t64(w))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_sum_of_ones():
    out = nn.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1), (2, 0)])
def test_conv2d_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = nn.conv2d(t64(x), t64(w), stride=stride, padding=pad)
    ref = conv2d_loops(x, w, stride, pad)
    assert out.shape == ref.shape
    assert np.max(np.abs(out.data - ref)) < 1e-6


def test_conv2d_output_size_rule():
    x = t64(np.zeros((1, 2, 11, 7)))
    out = nn.conv2d(x, t64(np.zeros((4, 2, 3, 3))), stride=2, padding=1)
    assert out.shape == (1, 4, (11 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)


def test_conv2d_channel_mismatch():
    with pytest.raises(ValueError, match="channel"):
        nn.conv2d(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((2, 2, 3, 3))))


# conv_transpose2d ------------------------------------------------------------

def test_conv_transpose_shape_stride2():
    out = nn.conv_transpose2d(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 2, 2))), stride=2)
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 4, 4)))


def test_conv_transpose_zero_input():
    w = np.random.default_rng(1).standard_normal((2, 3, 3, 3))
    out = nn.conv_transpose2d(t64(np.zeros((1, 2, 4, 4))), t64(w), stride=2, padding=1)
    assert not out.data.any()


def test_conv_transpose_mismatch():
    with pytest.raises(ValueError):
        nn.conv_transpose2d(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((2, 1, 3, 3))))


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 2), c=st.integers(1, 3), f=st.integers(1, 3), k=st.integers(1, 4),
    stride=st.integers(1, 3), pad=st.integers(0, 2), h=st.integers(4, 9), seed=st.integers(0, 2**31),
)
def test_conv_adjointness(n, c, f, k, stride, pad, h, seed):
    if pad >= k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, h))
    kern = rng.standard_normal((f, c, k, k))
    y_shape = nn.conv2d(t64(x), t64(kern), stride=stride, padding=pad).shape
    y = rng.standard_normal(y_shape)
    lhs = np.sum(nn.conv2d(t64(x), t64(kern), stride=stride, padding=pad).data * y)
    extra = h - ((y_shape[2] - 1) * stride - 2 * pad + k)
    back = nn.conv_transpose2d(t64(y), t64(kern), stride=stride, padding=pad, output_padding=extra)
    assert back.shape == x.shape
    rhs = np.sum(x * back.data)
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))


# kernels backends -------------------------------------------------------------

@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
def test_backends_agree():
    rng = np.random.default_rng(3)
    c, p = kernels.using("cython"), kernels.using("python")
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((3, 4, 9, 7)).astype(dtype)
        a, b = c.im2col(x, 3, 2, 1), p.im2col(x, 3, 2, 1)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(c.col2im(a, x.shape, 3, 2, 1), p.col2im(a, x.shape, 3, 2, 1), rtol=1e-6)
        lat = rng.standard_normal((300, 5)).astype(dtype)
        cb = rng.standard_normal((20, 5)).astype(dtype)
        np.testing.assert_array_equal(c.nearest_code(lat, cb), p.nearest_code(lat, cb))


def test_env_var_forces_python_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, VQDETECT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from vqdetect import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


# losses -----------------------------------------------------------------------

def test_kl_closed_forms():
    assert nn.kl_diag_gaussian(np.zeros(4), np.ones(4)).item() == 0.0
    assert abs(nn.kl_diag_gaussian([1.0], [1.0]).item() - 0.5) < 1e-9
    assert abs(nn.kl_diag_gaussian([0.0], [math.e]).item() - 0.5 * (math.e - 2)) < 1e-9
    assert abs(nn.kl_diag_gaussian([0.0], [math.e]).item() - 0.35914) < 1e-5


def test_kl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        nn.kl_diag_gaussian([0.0], [0.0])


def test_vae_total_loss():
    x = np.zeros(2)
    assert nn.vae_total_loss(x, x, np.zeros(3), np.ones(3), 5.0).item() == 0.0
    xt = np.array([0.3, -1.2])
    assert nn.vae_total_loss(x, xt, [0.4], [2.0], 0.0).item() == np.sum((x - xt) ** 2)
    assert abs(nn.vae_total_loss([0, 0], [1, 1], [1.0], [1.0], 2.0).item() - 3.0) < 1e-9
    with pytest.raises(ValueError):
        nn.vae_total_loss(np.zeros(2), np.zeros(3), [0.0], [1.0], 1.0)


# backward ---------------------------------------------------------------------

def test_backward_sum_of_params():
    p = Parameter(np.arange(6.0).reshape(2, 3), dtype=np.float64)
    q = Parameter(np.ones(3), dtype=np.float64)
    (p.sum() + q.sum()).backward()
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(q.grad, np.ones(3))


def test_backward_constant_loss():
    p = Parameter(np.ones(3), dtype=np.float64)
    (p * 0.0).sum().backward()
    np.testing.assert_array_equal(p.grad, np.zeros(3))


def test_backward_non_scalar():
    p = Parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        (p * 2.0).backward()


def test_conv_layer_mse_gradcheck(f64):
    rng = np.random.default_rng(0)
    layer = nn.Conv2d(2, 3, 3, stride=2, padding=1, rng=rng)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)))
    target = rng.standard_normal((2, 3, 3, 3))
    loss = lambda: nn.tsum(nn.square(layer(x) - target))  # noqa: E731
    assert check_module_grads(loss, layer.parameters(), rng) < 1e-4


def test_input_gradient_conv_transpose(f64):
    rng = np.random.default_rng(1)
    x = Parameter(rng.standard_normal((1, 2, 3, 3)))
    layer = nn.ConvTranspose2d(2, 2, 4, stride=2, padding=1, rng=rng)
    loss = lambda: nn.mse(layer(x), np.zeros((1, 2, 6, 6)))  # noqa: E731
    assert check_module_grads(loss, [x] + layer.parameters(), rng) < 1e-4


def test_elementwise_ops_gradcheck(f64):
    rng = np.random.default_rng(2)
    a = Parameter(rng.uniform(0.5, 2.0, (3, 4)))
    b = Parameter(rng.standard_normal((1, 4)))
    z = Parameter(rng.standard_normal((5, 1)))
    w = Parameter(rng.standard_normal((4, 1)))

    def loss():
        u = nn.log(a) * b + nn.square(a - b)
        v = nn.concat([nn.relu(u), nn.sigmoid(u)], axis=0)
        r = nn.reshape(v, (6, 4)).mean(axis=0, keepdims=True)
        logit = nn.matmul(nn.concat([r, r, r, r, r], axis=0), w) + z
        return nn.bce_with_logits(logit, np.array([0, 1, 1, 0, 1.0])) + nn.tsum(r)

    assert check_module_grads(loss, [a, b, z, w], rng) < 1e-4


def test_float32_float64_agree():
    rng = np.random.default_rng(4)
    layer = nn.Conv2d(3, 4, 3, padding=1, rng=rng, dtype=np.float32)
    x = rng.random((2, 3, 8, 8))
    out32 = layer(Tensor(x.astype(np.float32))).data
    layer.astype(np.float64)
    out64 = layer(Tensor(x, dtype=np.float64)).data
    assert rel_error(out32, out64) < 1e-4


# optimizers -------------------------------------------------------------------

def test_sgd_rule():
    cfg = nn.OptimConfig(name="sgd", lr=0.1)
    p, _ = nn.optimizer_step([np.array(1.0)], [np.array(1.0)], None, cfg)
    assert abs(p[0] - 0.9) < 1e-12
    p, _ = nn.optimizer_step([np.array(1.0)], [np.array(0.0)], None, cfg)
    assert p[0] == 1.0


@pytest.mark.parametrize("g", [1e-3, 1.0, 250.0, -7.0])
def test_adam_first_step_magnitude(g):
    cfg = nn.OptimConfig(lr=2e-4)
    p, state = nn.optimizer_step([np.array(0.5)], [np.array(g)], None, cfg)
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert abs(abs(p[0] - 0.5) - 2e-4) < 2e-4 * 1e-4
    assert state["t"] == 1


def test_adam_class_matches_functional():
    rng = np.random.default_rng(5)
    p = Parameter(rng.standard_normal(4), dtype=np.float64)
    opt = nn.Adam([p], lr=1e-2)
    arr, state = p.data.copy(), None
    for _ in range(5):
        g = rng.standard_normal(4)
        p.grad = g.copy()
        opt.step()
        (arr,), state = nn.optimizer_step([arr], [g], state, nn.OptimConfig(lr=1e-2))
    np.testing.assert_allclose(p.data, arr, rtol=1e-12)


def test_adam_zero_grad_keeps_params():
    p = Parameter(np.ones(3), dtype=np.float64)
    opt = nn.Adam([p])
    p.grad = np.zeros(3)
    opt.step()
    np.testing.assert_array_equal(p.data, np.ones(3))


# checkpoints ------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    m = nn.Sequential(nn.Conv2d(2, 3, 3, rng=rng), nn.ReLU(), nn.Conv2d(3, 1, 1, rng=rng))
    arch = {"kind": "test", "ch": [2, 3, 1]}
    nn.save_module(tmp_path / "m.ckpt", m, arch, extra={"x": np.arange(5, dtype=np.float32)})
    m2 = nn.Sequential(nn.Conv2d(2, 3, 3, rng=np.random.default_rng(9)), nn.ReLU(),
                       nn.Conv2d(3, 1, 1, rng=np.random.default_rng(9)))
    extra, _ = nn.load_module(tmp_path / "m.ckpt", m2, arch)
    for a, b in zip(m.parameters(), m2.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(extra["x"], np.arange(5))
    with pytest.raises(nn.ArchitectureMismatch):
        nn.load_module(tmp_path / "m.ckpt", m2, {"kind": "other"})


def test_checkpoint_corruption(tmp_path):
    (tmp_path / "bad").write_bytes(b"")
    with pytest.raises(nn.CheckpointError):
        nn.load_arrays(tmp_path / "bad")
    nn.save_arrays(tmp_path / "ok", {"a": 1}, {"w": np.ones(10, dtype=np.float32)})
    raw = (tmp_path / "ok").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(nn.CheckpointError, match="truncated"):
        nn.load_arrays(tmp_path / "short")
