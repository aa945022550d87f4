import numpy as np
import pytest

from encoderlab.autodiff import (Adam, NonFiniteError, Parameter, Tensor, adam_step, clip_grad_global_norm,
                                 global_grad_norm, kernels, no_grad)
from encoderlab.autodiff import checkpoint
from encoderlab.autodiff import functional as F
from encoderlab.autodiff.init import orthogonal
from gradcheck_cases import CASES, TOLERANCE, check, worst_error


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_differences(name):
    assert worst_error(name, instances=25, seed=1) <= TOLERANCE


@pytest.mark.skipif(not kernels.torch_available(), reason="torch not installed")
@pytest.mark.parametrize("name", ["conv2d", "maxpool2d"])
def test_finite_differences_torch_kernels(name):
    with kernels.use_backend("torch"):
        assert worst_error(name, instances=25, seed=2) <= TOLERANCE


def naive_conv(x, w, b, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cpg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    opg = cout // groups
    for i in range(n):
        for o in range(cout):
            g = o // opg
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for c in range(cpg):
                        for dy in range(k):
                            for dx in range(k):
                                acc += w[o, c, dy, dx] * xp[i, g * cpg + c, y * stride + dy, xx * stride + dx]
                    out[i, o, y, xx] = acc
    return out


@pytest.mark.parametrize("stride,padding,groups,k", [
    (1, 1, 1, 3), (2, 1, 1, 3), (1, 0, 2, 3), (4, 0, 1, 8), (2, 0, 3, 2), (5, 0, 3, 5),
])
def test_conv_matches_loop_oracle(stride, padding, groups, k):
    rng = np.random.default_rng(stride * 10 + k)
    cin = 6 if groups == 3 else 4
    x = rng.standard_normal((2, cin, 11, 10))
    cout = groups * 2
    w = rng.standard_normal((cout, cin // groups, k, k))
    b = rng.standard_normal(cout)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, groups).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, padding, groups), rtol=1e-10, atol=1e-10)


def test_conv_unbatched_input():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((3, 6, 6)), rng.standard_normal((2, 3, 3, 3))
    out = F.conv2d(Tensor(x), Tensor(w), None, 1, 1)
    assert out.shape == (2, 6, 6)
    np.testing.assert_allclose(out.data, naive_conv(x[None], w, np.zeros(2), 1, 1, 1)[0], atol=1e-10)


@pytest.mark.parametrize("kwargs,msg", [
    (dict(w_shape=(4, 2, 3, 3), groups=1), "channel"),
    (dict(w_shape=(3, 1, 3, 3), groups=2), "group"),
    (dict(w_shape=(2, 3, 9, 9), groups=1), "output size"),
])
def test_conv_shape_errors_name_the_problem(kwargs, msg):
    x = Tensor(np.zeros((1, 3, 5, 5)))
    with pytest.raises(ValueError, match=msg):
        F.conv2d(x, Tensor(np.zeros(kwargs["w_shape"])), None, 1, 0, kwargs["groups"])


def naive_maxpool(x, k=3, s=2, p=1):
    n, c, h, w = x.shape
    ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    out = np.full((n, c, ho, wo), -np.inf)
    for y in range(ho):
        for xx in range(wo):
            for dy in range(k):
                for dx in range(k):
                    yy, xi = y * s - p + dy, xx * s - p + dx
                    if 0 <= yy < h and 0 <= xi < w:
                        out[:, :, y, xx] = np.maximum(out[:, :, y, xx], x[:, :, yy, xi])
    return out


def test_maxpool_matches_loop_oracle():
    x = np.random.default_rng(1).standard_normal((2, 3, 9, 8))
    np.testing.assert_array_equal(F.maxpool2d(Tensor(x)).data, naive_maxpool(x))


def test_maxpool_tie_sends_gradient_to_first_element():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    F.maxpool2d(x, 3, 2, 1).backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_adaptive_pool_bins():
    x = np.arange(5 * 7, dtype=np.float64).reshape(1, 1, 5, 7)
    out = F.adaptive_avg_pool(Tensor(x), 2, 3).data[0, 0]
    rows, cols = [(0, 2), (2, 5)], [(0, 2), (2, 4), (4, 7)]
    expected = [[x[0, 0, r0:r1, c0:c1].mean() for c0, c1 in cols] for r0, r1 in rows]
    np.testing.assert_allclose(out, expected)
    mx = F.adaptive_max_pool(Tensor(x), 2, 3).data[0, 0]
    np.testing.assert_array_equal(mx, [[x[0, 0, r0:r1, c0:c1].max() for c0, c1 in cols] for r0, r1 in rows])


def test_gap_is_spatial_mean():
    x = np.random.default_rng(0).standard_normal((2, 4, 8, 8)).astype(np.float32)
    expected = x.astype(np.float64).mean(axis=(2, 3)).astype(np.float32)
    np.testing.assert_array_equal(F.adaptive_avg_pool(Tensor(x)).data[..., 0, 0], expected)


def test_elementwise_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        F.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_backward_accumulates_shared_parents():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = F.sum(F.add(F.mul(x, x), x))
    y.backward()
    np.testing.assert_array_equal(x.grad, [5.0, 7.0])


def test_backward_order_is_reverse_creation():
    # a diamond: both branches must have delivered their gradient before `a` propagates
    x = Tensor(np.array([1.5]), requires_grad=True)
    a = F.exp(x)
    b = F.mul(a, 2.0)
    c = F.square(a)
    F.sum(F.add(b, c)).backward()
    np.testing.assert_allclose(x.grad, [np.exp(1.5) * (2 + 2 * np.exp(1.5))])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = F.mul(x, 2.0)
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        F.sum(y).backward()


def test_categorical_sampling_inverse_cdf():
    logits = Tensor(np.log(np.array([[0.2, 0.3, 0.5]] * 20000)))
    rng = np.random.default_rng(0)
    a = F.Categorical(logits).sample(rng)
    u = np.random.default_rng(0).random(20000)
    np.testing.assert_array_equal(a, np.searchsorted(np.array([0.2, 0.5, 1.0]), u, side="right"))


def test_categorical_entropy_of_uniform():
    d = F.Categorical(Tensor(np.zeros((1, 9))))
    assert d.entropy().data[0] == pytest.approx(np.log(9))


def test_categorical_rejects_nan_logits():
    with pytest.raises(NonFiniteError):
        F.Categorical(Tensor(np.array([[0.0, np.nan]])))


def _param(values, grad):
    p = Parameter(np.array(values, dtype=np.float64), name="p")
    p.grad = np.array(grad, dtype=np.float64)
    return p


def test_adam_first_step_moves_by_lr():
    p = _param([1.0, -2.0], [0.3, -5.0])
    adam_step([p], lr=0.1)
    # bias correction makes the first update lr * sign(g) up to eps
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)
    assert p.step_count == 1


def test_adam_two_steps_closed_form():
    p = _param([0.0], [1.0])
    adam_step([p], lr=0.01)
    p.grad = np.array([3.0])
    adam_step([p], lr=0.01)
    m = 0.9 * 0.1 * 1 + 0.1 * 3
    v = 0.999 * 0.001 * 1 + 0.001 * 9
    step2 = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    step1 = 0.01 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [-step1 - step2], rtol=1e-12)


def test_adam_rejects_non_finite_before_mutating():
    good, bad = _param([1.0], [1.0]), _param([2.0], [np.inf])
    with pytest.raises(NonFiniteError):
        adam_step([good, bad], lr=0.1)
    assert good.data[0] == 1.0 and good.step_count == 0


def test_adam_class_wraps_step():
    p = _param([1.0], [1.0])
    opt = Adam([p], lr=0.5)
    opt.step()
    opt.zero_grad()
    assert p.data[0] == pytest.approx(0.5) and not p.grad.any()


def test_clip_global_norm():
    a, b = _param([3.0], [3.0]), _param([0.0], [4.0])
    norm = clip_grad_global_norm([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])
    assert global_grad_norm([a, b]) == pytest.approx(1.0)


def test_clip_leaves_small_gradients_alone():
    a = _param([0.0], [0.3])
    assert clip_grad_global_norm([a], 1.0) == pytest.approx(0.3)
    assert a.grad[0] == 0.3


def test_orthogonal_init():
    w = orthogonal((6, 4), 2.0, np.random.default_rng(0)).astype(np.float64)
    np.testing.assert_allclose(w.T @ w, 4 * np.eye(4), atol=1e-5)
    conv = orthogonal((8, 2, 3, 3), 1.0, np.random.default_rng(0)).reshape(8, -1).astype(np.float64)
    np.testing.assert_allclose(conv @ conv.T, np.eye(8), atol=1e-5)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32), "b": np.zeros(0, np.float32),
               "scalar": np.float32(2.5).reshape(())}
    checkpoint.save(tmp_path / "c.impk", tensors)
    back = checkpoint.load(tmp_path / "c.impk")
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
        assert back[k].dtype == np.float32


def test_fnv1a_reference_values():
    assert checkpoint.fnv1a64(b"") == 0xCBF29CE484222325
    assert checkpoint.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert checkpoint.fnv1a64(b"foobar") == 0x85944171F73967E8


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:-9], "truncat|short|length"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: b[:-12] + bytes([b[-12] ^ 1]) + b[-11:], "checksum"),
])
def test_checkpoint_corruption_detected(mutate, msg):
    blob = checkpoint.encode({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    with pytest.raises(checkpoint.CheckpointError, match=msg):
        checkpoint.decode(mutate(blob))
