import numpy as np
import pytest

from cinescar import ndgrad as nd
from cinescar.netarch import UNetSpec, build, forward
from gradcheck import check_gradients


def test_output_shape_contract(rng):
    model = build(UNetSpec(in_channels=3, out_channels=2))
    out = forward(model, rng.uniform(size=(2, 3, 64, 64)))
    assert out.shape == (2, 2, 64, 64)
    assert np.all(np.isfinite(out.data))


def test_parameter_count_closed_form():
    # depth 1, base 4, in 2, out 2; each conv contributes cout*cin*k*k + cout
    conv = lambda cout, cin, k=3: cout * cin * k * k + cout
    expected = (
        conv(4, 2) + conv(4, 4)  # encoder level 0
        + conv(8, 4) + conv(8, 8)  # bottleneck
        + conv(4, 8) + conv(4, 8) + conv(4, 4)  # decoder: up-conv, post-concat double conv
        + conv(2, 4, k=1)  # head
    )
    assert expected == 1846
    assert build(UNetSpec(2, 2, depth=1, base_channels=4)).num_parameters() == expected


def test_channel_progression():
    model = build(UNetSpec(1, 1, depth=3, base_channels=16))
    for k in range(3):
        assert model.params[f"enc{k}.conv1.w"].shape[0] == 16 * 2**k
    assert model.params["mid.conv1.w"].shape[0] == 128


def test_same_seed_same_parameters():
    a, b = build(UNetSpec(2, 2), seed=7), build(UNetSpec(2, 2), seed=7)
    c = build(UNetSpec(2, 2), seed=8)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    assert not np.array_equal(a.params["enc0.conv1.w"].data, c.params["enc0.conv1.w"].data)


def test_zero_input_zero_head_sigmoid_is_half():
    model = build(UNetSpec(4, 2, final_activation="sigmoid", head_scale=0.0))
    out = forward(model, np.zeros((1, 4, 16, 16)))
    np.testing.assert_array_equal(out.data, 0.5)


def test_channel_mismatch():
    with pytest.raises(ValueError, match="input channels"):
        forward(build(UNetSpec(2, 1)), np.zeros((1, 3, 16, 16)))


def test_indivisible_extent_named():
    with pytest.raises(ValueError, match="W=20"):
        forward(build(UNetSpec(1, 1, depth=3)), np.zeros((1, 1, 16, 20)))


def test_batch_order_independence(rng):
    model = build(UNetSpec(2, 2, depth=2, base_channels=4))
    x = rng.uniform(size=(3, 2, 16, 16))
    full = forward(model, x).data
    flipped = forward(model, x[::-1].copy()).data
    np.testing.assert_allclose(flipped[::-1], full, atol=1e-12)


def test_gradients_finite_difference_spot_check(rng):
    model = build(UNetSpec(2, 1, depth=1, base_channels=2), seed=3)
    x = rng.uniform(size=(1, 2, 16, 16))
    r = rng.normal(size=(1, 1, 16, 16))
    names = list(model.params)
    # zero biases put relu kinks exactly at 0 wherever a layer's input is all zero
    for n in names:
        if n.endswith(".b"):
            model.params[n].data[:] = rng.uniform(0.05, 0.2, size=model.params[n].shape)

    def loss_from(*arrays):
        saved = {n: model.params[n] for n in names}
        for n, a in zip(names, arrays):
            model.params[n] = a
        out = nd.sum(nd.mul(forward(model, x), nd.Tensor(r)))
        model.params.update(saved)
        return out

    arrays = [model.params[n].data.copy() for n in names]
    assert check_gradients(loss_from, arrays) <= 1e-4
