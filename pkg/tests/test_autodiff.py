import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinoir import autodiff as ad
from swinoir.autodiff import Tape, Tensor
from swinoir.errors import ContractError, ShapeError

GRAD_TOL = 1e-4


def rand(rng, *shape, grad=True):
    return Tensor(rng.uniform(-1, 1, shape), requires_grad=grad)


def projected(fn, rng, out_shape):
    """Scalar loss sum(fn(...) * R) so every output element feeds the gradient."""
    weights = rng.uniform(-1, 1, out_shape)
    return lambda *args: (fn(*args) * weights).sum()


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_hand_expansion():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[1 * 3 + 2 * 4]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_broadcasts_batch_of_one(rng):
    a = rng.random((4, 2, 3))
    b = rng.random((1, 3, 5))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, a @ b)


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [-50.0, 0.0, 3.7, 700.0])
def test_softmax_log2_offset(c):
    # scalar oracle: exp ratios of the two logits
    e0, e1 = 1.0, math.exp(math.log(2.0))
    expected = [e0 / (e0 + e1), e1 / (e0 + e1)]
    out = ad.softmax_lastdim(Tensor([c, c + math.log(2.0)])).data
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out, [1 / 3, 2 / 3], rtol=0, atol=1e-12)


def test_softmax_single_element():
    assert ad.softmax_lastdim(Tensor([7.0])).data.tolist() == [1.0]


def test_layer_norm_constant_slice():
    out = ad.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-5)
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])


def test_layer_norm_two_values():
    # mean 2, population std 1
    out = ad.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-14)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_zero_gamma(rng):
    out = ad.layer_norm(Tensor(rng.random((4, 2))), Tensor(np.zeros(2)), Tensor([2.0, 2.0]))
    np.testing.assert_array_equal(out.data, np.full((4, 2), 2.0))


def test_gelu_values():
    assert ad.gelu(Tensor([0.0])).data[0] == 0.0
    assert ad.gelu(Tensor([1.0])).data[0] == pytest.approx(1.0 * 0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-15)
    assert ad.gelu(Tensor([1.0])).data[0] == pytest.approx(0.841345, abs=1e-6)
    assert abs(ad.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-9


def test_conv_identity_kernel(rng):
    x = rng.random((5, 6, 2))
    k = np.zeros((3, 3, 2, 1))
    k[1, 1, 1, 0] = 1.0
    out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[..., 0], x[..., 1])


def direct_conv(x, k):
    """Direct zero-padded neighbourhood sum, no im2col."""
    h, w, cin = x.shape
    ks = k.shape[0]
    p = ks // 2
    out = np.zeros((h, w, k.shape[-1]))
    for i in range(h):
        for j in range(w):
            for di in range(ks):
                for dj in range(ks):
                    y, xx = i + di - p, j + dj - p
                    if 0 <= y < h and 0 <= xx < w:
                        out[i, j] += x[y, xx] @ k[di, dj]
    return out


def test_conv_ones_kernel_on_ones():
    x = np.ones((5, 5, 1))
    k = np.ones((3, 3, 1, 1))
    out = ad.conv2d(Tensor(x), Tensor(k)).data[..., 0]
    np.testing.assert_array_equal(out, direct_conv(x, k)[..., 0])
    assert out[2, 2] == 9 and out[0, 0] == 4 and out[0, 4] == 4 and out[0, 2] == 6


def test_conv_matches_direct_sum(rng):
    x = rng.random((6, 7, 3))
    k = rng.random((3, 3, 3, 4))
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k)).data, direct_conv(x, k), atol=1e-12)


def test_conv_1x1_scales():
    x = np.arange(12.0).reshape(3, 4, 1)
    out = ad.conv2d(Tensor(x), Tensor([[[[2.5]]]]))
    np.testing.assert_array_equal(out.data, 2.5 * x)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


def test_conv_batched_equals_per_image(rng):
    x = rng.random((3, 5, 5, 2))
    k = Tensor(rng.random((3, 3, 2, 2)))
    batched = ad.conv2d(Tensor(x), k).data
    for i in range(3):
        np.testing.assert_array_equal(batched[i], ad.conv2d(Tensor(x[i]), k).data)


def test_pixel_shuffle_index_formula():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = ad.pixel_shuffle(Tensor([[[a, b, c, d]]]), 2)
    assert out.shape == (2, 2, 1)
    assert out.data[..., 0].tolist() == [[a, b], [c, d]]


def test_pixel_shuffle_enumerated(rng):
    r, h, w, c = 3, 2, 3, 2
    x = rng.random((h, w, c * r * r))
    out = ad.pixel_shuffle(Tensor(x), r).data
    for y in range(h):
        for xx in range(w):
            for dy in range(r):
                for dx in range(r):
                    for ch in range(c):
                        assert out[y * r + dy, xx * r + dx, ch] == x[y, xx, ch * r * r + dy * r + dx]


def test_pixel_shuffle_r1_identity(rng):
    x = rng.random((3, 4, 5))
    np.testing.assert_array_equal(ad.pixel_shuffle(Tensor(x), 1).data, x)


def test_pixel_shuffle_roundtrip(rng):
    x = rng.random((2, 3, 8))
    back = ad.pixel_unshuffle(ad.pixel_shuffle(Tensor(x), 2), 2).data
    assert back.tobytes() == x.tobytes()


def test_pixel_shuffle_bad_channels():
    with pytest.raises(ShapeError):
        ad.pixel_shuffle(Tensor(np.zeros((2, 2, 6))), 2)


# ---------------------------------------------------------------------------
# backward


def test_backward_sum_gives_ones(rng):
    x = rand(rng, 3, 4)
    with Tape() as tape:
        loss = x.sum()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = (x * 3.0).sum()
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar(rng):
    x = rand(rng, 3)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_rejects_foreign_loss(rng):
    x = rand(rng, 3)
    with Tape():
        loss = x.sum()
    with pytest.raises(ContractError):
        Tape().backward(loss)


def test_no_recording_outside_tape(rng):
    x = rand(rng, 3)
    y = (x * x).sum()
    assert not y.requires_grad


def test_record_is_topologically_ordered(rng):
    x = rand(rng, 2, 2)
    with Tape() as tape:
        loss = ad.gelu(x @ x).mean()
    produced = set()
    for e in tape.entries:
        for t in e.inputs:
            assert t is x or id(t) in produced or not t.requires_grad
        produced.add(id(e.output))
    assert tape.ops() == ["matmul", "gelu", "mean"]


def test_leaves_without_grad_untouched(rng):
    x = rand(rng, 3)
    c = rand(rng, 3, grad=False)
    with Tape() as tape:
        loss = (x * c).sum()
    tape.backward(loss)
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, c.data)


OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)], (3, 4)),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)], (3, 4)),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)], (2, 3)),
    "div": (lambda a, b: a / (b * b + 1.0), [(2, 3), (2, 3)], (2, 3)),
    "matmul": (ad.matmul, [(2, 3, 4), (4, 5)], (2, 3, 5)),
    "softmax": (ad.softmax_lastdim, [(3, 5)], (3, 5)),
    "gelu": (ad.gelu, [(4, 3)], (4, 3)),
    "sqrt": (lambda a: ad.sqrt(a * a + 0.5), [(5,)], (5,)),
    "abs": (lambda a: ad.tabs(a), [(6,)], (6,)),
    "exp": (ad.exp, [(4,)], (4,)),
    "transpose": (lambda a: a.transpose(2, 0, 1), [(2, 3, 4)], (4, 2, 3)),
    "reshape": (lambda a: a.reshape(6, 2), [(3, 4)], (6, 2)),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), [(2, 2, 3), (2, 2, 1)], (2, 2, 4)),
    "getitem": (lambda a: a[1:, ::2], [(3, 4)], (2, 2)),
    "mean_axis": (lambda a: a.mean(axis=-1), [(3, 4)], (3,)),
    "sum_axis": (lambda a: a.sum(axis=0, keepdims=True), [(3, 4)], (1, 4)),
    "take": (lambda a: ad.take(a, np.array([[0, 2], [2, 1]])), [(3, 2)], (2, 2, 2)),
    "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b), [(2, 3, 4), (4,), (4,)], (2, 3, 4)),
    "conv3": (lambda x, k, b: ad.conv2d(x, k, b), [(5, 4, 2), (3, 3, 2, 3), (3,)], (5, 4, 3)),
    "conv3_batched": (lambda x, k: ad.conv2d(x, k), [(2, 3, 4, 2), (3, 3, 2, 2)], (2, 3, 4, 2)),
    "conv1": (lambda x, k, b: ad.conv2d(x, k, b), [(3, 3, 4), (1, 1, 4, 2), (2,)], (3, 3, 2)),
    "pixel_shuffle": (lambda a: ad.pixel_shuffle(a, 2), [(2, 3, 8)], (4, 6, 2)),
    "pixel_unshuffle": (lambda a: ad.pixel_unshuffle(a, 2), [(4, 2, 3)], (2, 1, 12)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_finite_differences(name, rng):
    fn, shapes, out_shape = OPS[name]
    inputs = [rand(rng, *s) for s in shapes]
    if name == "abs":
        inputs[0].data += np.sign(inputs[0].data) * 0.1  # keep away from the kink
    assert fn(*inputs).shape == out_shape
    err = ad.gradcheck(projected(fn, rng, out_shape), inputs, step=1e-5)
    assert err < GRAD_TOL, f"{name}: {err}"


def test_gradient_with_reused_operand(rng):
    x = rand(rng, 3, 3)
    err = ad.gradcheck(lambda a: (ad.matmul(a, a) * a).sum(), [x])
    assert err < GRAD_TOL


# ---------------------------------------------------------------------------
# properties


dims = st.integers(1, 4)


@settings(max_examples=40, deadline=None)
@given(st.lists(dims, min_size=1, max_size=3), dims, dims, dims)
def test_matmul_shape_algebra(batch, p, q, r):
    out = ad.matmul(Tensor(np.ones((*batch, p, q))), Tensor(np.ones((q, r))))
    assert out.shape == (*batch, p, r)


@settings(max_examples=60, deadline=None)
@given(st.lists(dims, min_size=1, max_size=3), st.floats(-50, 50), st.integers(0, 2**31))
def test_softmax_rows_normalised_and_shift_invariant(shape, shift, seed):
    x = np.random.default_rng(seed).uniform(-5, 5, shape)
    out = ad.softmax_lastdim(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax_lastdim(Tensor(x + shift)).data, out, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(dims, dims, dims, st.integers(1, 3), st.integers(0, 2**31))
def test_pixel_shuffle_roundtrip_property(h, w, c, r, seed):
    x = np.random.default_rng(seed).random((h, w, c * r * r))
    shuffled = ad.pixel_shuffle(Tensor(x), r)
    assert shuffled.shape == (h * r, w * r, c)
    assert ad.pixel_unshuffle(shuffled, r).data.tobytes() == x.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]))
def test_conv_shape_preserved(h, w, cin, cout, k):
    out = ad.conv2d(Tensor(np.ones((h, w, cin))), Tensor(np.ones((k, k, cin, cout))), Tensor(np.zeros(cout)))
    assert out.shape == (h, w, cout)
    assert np.all(np.isfinite(out.data))


def test_float32_stays_float32(rng):
    x = Tensor(rng.random((2, 3)).astype(np.float32), requires_grad=True)
    with Tape() as tape:
        loss = ad.gelu(x * 2.0 + 1.0).mean()
    tape.backward(loss)
    assert loss.dtype == np.float32 and x.grad.dtype == np.float32


def test_deterministic_forward(rng):
    x = rng.random((4, 4, 3))
    k = rng.random((3, 3, 3, 2))
    a = ad.gelu(ad.conv2d(Tensor(x), Tensor(k))).data
    b = ad.gelu(ad.conv2d(Tensor(x), Tensor(k))).data
    assert a.tobytes() == b.tobytes()


def test_dump_roundtrip(tmp_path, rng):
    x = Tensor(rng.random((2, 3, 4)))
    ad.dump_tensor(x, tmp_path / "x.npy")
    back = ad.load_tensor(tmp_path / "x.npy")
    assert back.shape == x.shape and back.data.tobytes() == x.data.tobytes()
