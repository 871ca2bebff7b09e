import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cinescar import ndgrad as nd
from gradcheck import check_gradients

N_INSTANCES = 20


def _weighted(out, r):
    return nd.sum(nd.mul(out, nd.Tensor(r)))


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _case(name, rng):
    """Random instance for one primitive: (builder, input arrays)."""
    s = (3, 4)
    if name in ("add", "sub", "mul"):
        a, b, r = rng.normal(size=s), rng.normal(size=s), rng.normal(size=s)
        op = getattr(nd, name)
        return (lambda x, y: _weighted(op(x, y), r)), [a, b]
    if name == "scalar_broadcast":
        a, b, r = rng.normal(size=s), rng.normal(size=(1,)), rng.normal(size=s)
        return (lambda x, y: _weighted(nd.mul(x, y) + y, r)), [a, b]
    if name == "div":
        a, b, r = rng.normal(size=s), _away_from_zero(rng, s, 0.5), rng.normal(size=s)
        return (lambda x, y: _weighted(nd.div(x, y), r)), [a, b]
    if name == "scale":
        a, r, c = rng.normal(size=s), rng.normal(size=s), rng.normal()
        return (lambda x: _weighted(nd.scale(x, c), r)), [a]
    if name in ("neg", "square", "sigmoid", "exp"):
        a, r = rng.normal(size=s), rng.normal(size=s)
        op = getattr(nd, name)
        return (lambda x: _weighted(op(x), r)), [a]
    if name in ("abs", "relu"):
        a, r = _away_from_zero(rng, s), rng.normal(size=s)
        op = getattr(nd, name)
        return (lambda x: _weighted(op(x), r)), [a]
    if name == "log":
        a, r = rng.uniform(0.1, 3.0, size=s), rng.normal(size=s)
        return (lambda x: _weighted(nd.log(x), r)), [a]
    if name == "log_guarded":
        a, r = rng.uniform(0.1, 3.0, size=s), rng.normal(size=s)
        return (lambda x: _weighted(nd.log(x, guarded=True), r)), [a]
    if name == "clip":
        a = rng.uniform(-2, 2, size=s)
        a[np.abs(np.abs(a) - 1.0) < 0.05] = 0.3
        r = rng.normal(size=s)
        return (lambda x: _weighted(nd.clip(x, -1.0, 1.0), r)), [a]
    if name == "sum_axis":
        a, r = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4))
        return (lambda x: _weighted(nd.sum(x, axis=1), r)), [a]
    if name == "mean":
        a = rng.normal(size=(2, 3, 4))
        return (lambda x: nd.mean(nd.square(x))), [a]
    if name == "concat":
        a, b, r = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 3, 3, 3))
        return (lambda x, y: _weighted(nd.concat([x, y], axis=1), r)), [a, b]
    if name == "slice":
        a, r = rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 2, 3))
        return (lambda x: _weighted(x[:, 1:, 1:4], r)), [a]
    if name == "reshape":
        a, r = rng.normal(size=(2, 6)), rng.normal(size=(3, 4))
        return (lambda x: _weighted(nd.reshape(x, (3, 4)), r)), [a]
    if name in ("conv2d", "conv2d_stride2"):
        stride = 2 if name.endswith("2") else 1
        x, w, b = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=(4,))
        ho = 6 // stride
        r = rng.normal(size=(2, 4, ho, ho))
        return (lambda xx, ww, bb: _weighted(nd.conv2d(xx, ww, bb, stride=stride), r)), [x, w, b]
    if name == "maxpool2x2":
        x, r = rng.permutation(64).reshape(1, 1, 8, 8) * 0.1 + rng.normal(scale=1e-3, size=(1, 1, 8, 8)), rng.normal(size=(1, 1, 4, 4))
        return (lambda xx: _weighted(nd.maxpool2x2(xx), r)), [x]
    if name == "upsample":
        x, r = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 2, 6, 6))
        return (lambda xx: _weighted(nd.upsample_nearest2x(xx), r)), [x]
    if name == "grid_sample":
        img = rng.normal(size=(2, 2, 5, 6))
        # irrational offsets keep samples off the integer kinks
        flow = rng.uniform(-1.5, 1.5, size=(2, 2, 5, 6)) + np.sqrt(2) / 7
        r = rng.normal(size=(2, 2, 5, 6))
        return (lambda i, f: _weighted(nd.grid_sample(i, f), r)), [img, flow]
    raise KeyError(name)


PRIMITIVES = [
    "add", "sub", "mul", "scalar_broadcast", "div", "scale", "neg", "square", "sigmoid", "exp",
    "abs", "relu", "log", "log_guarded", "clip", "sum_axis", "mean", "concat", "slice", "reshape",
    "conv2d", "conv2d_stride2", "maxpool2x2", "upsample", "grid_sample",
]


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(N_INSTANCES):
        build, arrays = _case(name, rng)
        worst = max(worst, check_gradients(build, arrays))
    assert worst <= 1e-4, f"{name}: relative error {worst:.2e}"


def _random_composition(rng):
    unary = [nd.sigmoid, nd.square, lambda t: nd.scale(t, 0.7), lambda t: nd.log(nd.sigmoid(t), guarded=True)]
    binary = [nd.add, nd.sub, nd.mul]
    program = []
    for _ in range(int(rng.integers(3, 8))):
        if rng.random() < 0.5:
            program.append(("u", int(rng.integers(len(unary)))))
        else:
            program.append(("b", int(rng.integers(len(binary)))))
    picks = rng.integers(0, 1000, size=(len(program), 2))
    r = rng.normal(size=(3, 4))

    def build(*leaves):
        nodes = list(leaves)
        for (kind, k), (i, j) in zip(program, picks):
            if kind == "u":
                nodes.append(unary[k](nodes[i % len(nodes)]))
            else:
                nodes.append(binary[k](nodes[i % len(nodes)], nodes[j % len(nodes)]))
        total = _weighted(nodes[-1], r)
        for node in nodes[:-1]:
            total = total + nd.scale(nd.mean(node), 0.1)
        return total

    return build, [rng.normal(size=(3, 4)) for _ in range(3)]


def test_random_compositions_match_finite_differences():
    rng = np.random.default_rng(99)
    for _ in range(40):
        build, arrays = _random_composition(rng)
        assert check_gradients(build, arrays) <= 1e-4


def test_relu_definition():
    out = nd.relu(nd.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_conv_identity_kernel(rng):
    img = rng.normal(size=(2, 1, 7, 5))
    out = nd.conv2d(nd.Tensor(img), nd.Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, img)


def test_conv_constant_image_all_ones_kernel():
    out = nd.conv2d(nd.Tensor(np.full((1, 1, 6, 6), 5.0)), nd.Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data[0, 0, 1:-1, 1:-1], 45.0)
    # zero padding: corners see a 2x2 patch, edges a 2x3 patch
    assert out.data[0, 0, 0, 0] == 20.0
    assert out.data[0, 0, 0, 2] == 30.0


def test_conv_stride_two_shape():
    out = nd.conv2d(nd.Tensor(np.zeros((1, 2, 8, 6))), nd.Tensor(np.zeros((3, 2, 3, 3))), stride=2)
    assert out.shape == (1, 3, 4, 3)


def test_square_gradient():
    x = nd.Tensor([3.0], requires_grad=True)
    (x * x).backward()
    assert x.grad[0] == 6.0


def test_sigmoid_gradient_at_zero():
    x = nd.Tensor(np.zeros(5), requires_grad=True)
    nd.sum(nd.sigmoid(x)).backward()
    np.testing.assert_array_equal(x.grad, 0.25)


def test_linearity_of_backward(rng):
    x0 = rng.normal(size=(4, 3))
    a, b = 1.7, -0.4
    f = lambda t: nd.sum(nd.sigmoid(nd.square(t)))
    g = lambda t: nd.mean(nd.mul(t, nd.exp(t)))

    def grad_of(build):
        x = nd.Tensor(x0, requires_grad=True)
        build(x).backward()
        return x.grad

    combined = grad_of(lambda t: nd.scale(f(t), a) + nd.scale(g(t), b))
    np.testing.assert_allclose(combined, a * grad_of(f) + b * grad_of(g), atol=1e-10, rtol=0)


def test_gradient_accumulates_over_reuse(rng):
    x0 = rng.normal(size=(3,))
    once = nd.Tensor(x0, requires_grad=True)
    nd.sum(nd.sigmoid(once)).backward()
    twice = nd.Tensor(x0, requires_grad=True)
    nd.sum(nd.sigmoid(twice) + nd.sigmoid(twice)).backward()
    np.testing.assert_allclose(twice.grad, 2 * once.grad, rtol=1e-15)


def test_determinism(rng):
    x0, w0 = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))

    def run():
        x, w = nd.Tensor(x0, requires_grad=True), nd.Tensor(w0, requires_grad=True)
        loss = nd.mean(nd.square(nd.maxpool2x2(nd.relu(nd.conv2d(x, w)))))
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    for first, second in zip(run(), run()):
        assert first.tobytes() == second.tobytes()


def test_backward_twice_raises():
    x = nd.Tensor([2.0], requires_grad=True)
    loss = nd.square(x)
    loss.backward()
    with pytest.raises(RuntimeError, match="already ran"):
        loss.backward()


def test_backward_needs_scalar_and_tape():
    with pytest.raises(ValueError):
        nd.square(nd.Tensor([1.0, 2.0], requires_grad=True)).backward()
    with pytest.raises(RuntimeError, match="empty tape"):
        nd.square(nd.Tensor([1.0])).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
        nd.add(nd.Tensor(np.zeros((2, 3))), nd.Tensor(np.zeros((3, 2))))


def test_conv_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        nd.conv2d(nd.Tensor(np.zeros((1, 2, 4, 4))), nd.Tensor(np.zeros((1, 3, 3, 3))))


def test_log_domain():
    with pytest.raises(ValueError, match="non-positive"):
        nd.log(nd.Tensor([1.0, 0.0]))
    out = nd.log(nd.Tensor([0.0, -1.0]), guarded=True)
    np.testing.assert_allclose(out.data, np.log(1e-12))


def test_nonfinite_construction_rejected():
    with pytest.raises(ValueError):
        nd.Tensor([np.nan])


def test_precision_modes():
    with nd.precision(32):
        assert nd.Tensor([1.0]).data.dtype == np.float32
        out = nd.conv2d(nd.Tensor(np.ones((1, 1, 4, 4))), nd.Tensor(np.ones((1, 1, 3, 3))))
        assert out.data.dtype == np.float32
    assert nd.Tensor([1.0]).data.dtype == np.float64


def test_no_grad_skips_graph():
    x = nd.Tensor([1.0], requires_grad=True)
    with nd.no_grad():
        y = nd.square(x)
    assert not y.requires_grad


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.0, 3.0))
def test_scalar_scaling_of_abs_sum(values, c):
    x = nd.Tensor(values)
    assert abs(nd.sum(nd.abs(nd.scale(x, c))).item() - c * nd.sum(nd.abs(x)).item()) <= 1e-9 * (1 + c * 40)


# -- Adam -------------------------------------------------------------------------

def _reference_adam(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float transcription of the published Adam recurrence."""
    x, m, v = x0, 0.0, 0.0
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        x = x - lr * m_hat / (v_hat**0.5 + eps)
        trace.append(x)
    return trace


def _run_engine_adam(x0, steps, lr):
    x = nd.Tensor([x0], requires_grad=True)
    opt = nd.Adam({"x": x}, lr=lr)
    trace = []
    for _ in range(steps):
        opt.zero_grad()
        nd.square(x).backward()
        opt.step()
        trace.append(x.item())
    return trace


def test_adam_defaults():
    state = nd.AdamState()
    assert (state.lr, state.beta1, state.beta2, state.eps, state.t) == (5e-4, 0.9, 0.999, 1e-8, 0)


def test_adam_zero_gradient_keeps_parameters(rng):
    p = rng.normal(size=(3, 3))
    params = {"w": p.copy()}
    state = nd.AdamState(lr=0.1)
    for _ in range(5):
        nd.adam_step(state, params, {"w": np.zeros((3, 3))})
    np.testing.assert_array_equal(params["w"], p)
    assert state.t == 5


def test_adam_first_step():
    x1 = _run_engine_adam(1.0, 1, lr=0.1)[0]
    # m_hat = 2, v_hat = 4
    assert x1 == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert x1 == pytest.approx(0.9, abs=1e-8)


def test_adam_ten_steps_match_reference():
    ours = _run_engine_adam(1.0, 10, lr=0.1)
    ref = _reference_adam(1.0, lambda x: 2 * x, 10, lr=0.1)
    np.testing.assert_allclose(ours, ref, atol=1e-12, rtol=0)


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(FloatingPointError, match="'bias'"):
        nd.adam_step(nd.AdamState(), {"bias": np.zeros(2)}, {"bias": np.array([0.0, np.inf])})
