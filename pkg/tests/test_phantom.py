import dataclasses
import math
import re

import numpy as np
import pytest

from cinescar.imagewarp import warp_bilinear
from cinescar.phantom import PhantomConfig, contraction_profile, flow_at, generate


@pytest.fixture(scope="module")
def default_case():
    return generate(PhantomConfig(seed=5))


def test_shapes(default_case):
    cfg = default_case.config
    assert default_case.sequence.shape == (cfg.T, cfg.H, cfg.W)
    assert default_case.gt_flows.shape == (cfg.T - 1, 2, cfg.H, cfg.W)
    assert default_case.myo_mask.shape == default_case.scar_mask.shape == (cfg.H, cfg.W)


def test_scar_inside_myocardium(default_case):
    assert default_case.scar_mask.sum() > 0
    assert np.all(default_case.myo_mask[default_case.scar_mask == 1] == 1)


def test_profile_starts_at_zero():
    assert contraction_profile(0, 8) == 0.0
    ys, xs = np.mgrid[0:64, 0:64].astype(float)
    fx, fy = flow_at(PhantomConfig(), 0, xs, ys)
    assert not np.any(fx) and not np.any(fy)


def test_gt_flow_reconstructs_reference():
    case = generate(PhantomConfig(noise=0.0))
    for t in range(1, case.config.T):
        rec = warp_bilinear(case.sequence[t], case.gt_flows[t - 1])
        # residual is interpolation error concentrated on the one-pixel edges
        assert np.mean(np.abs(rec - case.sequence[0])) < 0.01
        assert np.mean((rec - case.sequence[0]) ** 2) < 0.5 * np.mean((case.sequence[t] - case.sequence[0]) ** 2)


def test_no_contraction_means_static_sequence():
    case = generate(PhantomConfig(A_normal=0.0, A_scar=0.0, noise=0.0))
    assert not np.any(case.gt_flows)
    for frame in case.sequence[1:]:
        np.testing.assert_array_equal(frame, case.sequence[0])


def test_zero_width_sector():
    cfg = PhantomConfig(theta0=1.0, theta1=1.0)
    case = generate(cfg)
    assert case.scar_mask.sum() == 0
    uniform = generate(dataclasses.replace(cfg, A_scar=cfg.A_normal))
    np.testing.assert_array_equal(case.gt_flows, uniform.gt_flows)


def test_seed_determinism():
    a, b = generate(PhantomConfig(seed=3)), generate(PhantomConfig(seed=3))
    c = generate(PhantomConfig(seed=4))
    assert a.sequence.tobytes() == b.sequence.tobytes()
    assert not np.array_equal(a.sequence, c.sequence)
    np.testing.assert_array_equal(a.gt_flows, c.gt_flows)
    np.testing.assert_array_equal(a.myo_mask, c.myo_mask)
    np.testing.assert_array_equal(a.scar_mask, c.scar_mask)


def test_masks_independent_of_noise():
    a, b = generate(PhantomConfig(noise=0.0)), generate(PhantomConfig(noise=0.2, seed=9))
    np.testing.assert_array_equal(a.myo_mask, b.myo_mask)
    np.testing.assert_array_equal(a.scar_mask, b.scar_mask)


def test_scar_is_hypokinetic(default_case):
    cfg = default_case.config
    ys, xs = np.mgrid[0 : cfg.H, 0 : cfg.W].astype(float)
    theta = np.arctan2(ys - cfg.cy, xs - cfg.cx)
    r = np.hypot(xs - cfg.cx, ys - cfg.cy)
    # compare rays well inside and well outside the sector at the same radius
    for t in range(1, cfg.T):
        mag = np.hypot(*default_case.gt_flows[t - 1])
        for radius in (14.0, 17.0, 20.0):
            ring = np.abs(r - radius) < 0.5
            scar = ring & (theta > 0.3) & (theta < math.pi / 2 - 0.3)
            normal = ring & (np.abs(theta - math.pi) < 0.8)
            assert mag[scar].max() < mag[normal].min()


def test_texture_free_scar_matches_uniform_phantom_at_ed():
    cfg = PhantomConfig(noise=0.0, texture_cue=0.0)
    a = generate(cfg)
    b = generate(dataclasses.replace(cfg, A_scar=cfg.A_normal))
    np.testing.assert_array_equal(a.sequence[0], b.sequence[0])
    assert not np.array_equal(a.sequence[3], b.sequence[3])


@pytest.mark.parametrize(
    "changes, fragment",
    [
        ({"T": 1}, "T >= 2"),
        ({"r_in": 25.0}, "r_in"),
        ({"A_scar": 0.5}, "A_scar <= A_normal"),
        ({"A_normal": 1.0}, "A_normal in [0, 1)"),
        ({"noise": -1.0}, "noise"),
    ],
)
def test_invalid_config_lists_bound(changes, fragment):
    with pytest.raises(ValueError, match=re.escape(fragment)):
        generate(dataclasses.replace(PhantomConfig(), **changes))
