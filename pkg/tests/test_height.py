import numpy as np
import pytest

from hugloop.core import ConfigError
from hugloop.height import (
    AVERAGE_WINDOW,
    HeightAverager,
    HeightCalib,
    HeightObservation,
    averaged_height,
    bbox_for_height,
    estimate_height,
    load_calib,
    shoulder_angles,
)

CALIB = HeightCalib()


def test_estimate_matches_direct_formula():
    obs = HeightObservation(distance_d=2.0, bbox_height_b=400.0)
    want = 2.0 * 400.0 / 651.55 - 0.5518 * 2.0 + 1.73
    got = estimate_height(obs, CALIB)
    assert got == pytest.approx(want, abs=1e-12)
    assert f"{got:.4f}" == "1.8542"


def test_cancellation_at_alpha_times_focal():
    b = CALIB.alpha * CALIB.focal_f
    for d in (0.5, 1.0, 2.0, 3.7):
        got = estimate_height(HeightObservation(distance_d=d, bbox_height_b=b), CALIB)
        assert got == pytest.approx(1.73, abs=1e-9)


def test_zero_bbox_case():
    got = estimate_height(HeightObservation(distance_d=1.0, bbox_height_b=0.0), CALIB)
    assert got == pytest.approx(1.73 - 0.5518, abs=1e-12)


def test_estimate_rejects_bad_inputs():
    with pytest.raises(ValueError):
        estimate_height(HeightObservation(distance_d=0.0, bbox_height_b=100.0), CALIB)
    with pytest.raises(ValueError):
        estimate_height(HeightObservation(distance_d=1.0, bbox_height_b=-1.0), CALIB)


def test_estimate_is_affine_in_b_and_d():
    d0, b0 = 2.0, 380.0
    f = CALIB.focal_f
    h = lambda d, b: estimate_height(HeightObservation(d, b), CALIB)
    slope_b = (h(d0, b0 + 50) - h(d0, b0)) / 50
    assert slope_b == pytest.approx(d0 / f, rel=1e-9)
    slope_d = (h(d0 + 0.5, b0) - h(d0, b0)) / 0.5
    assert slope_d == pytest.approx(b0 / f - CALIB.alpha, rel=1e-9)


def test_bbox_for_height_inverts_estimate():
    for height in (1.45, 1.70, 1.91):
        for d in (1.2, 2.5):
            b = bbox_for_height(height, d, CALIB)
            got = estimate_height(HeightObservation(d, b), CALIB)
            assert got == pytest.approx(height, abs=1e-9)


def test_averager_warms_up_at_five():
    averager = HeightAverager(CALIB)
    obs = HeightObservation(2.0, 400.0)
    for _ in range(AVERAGE_WINDOW - 1):
        assert averager.push(obs) is None
    got = averager.push(obs)
    assert got == pytest.approx(estimate_height(obs, CALIB), abs=1e-12)


def test_averaged_height_mean_of_five():
    heights = [1.70, 1.72, 1.74, 1.76, 1.78]
    observations = [HeightObservation(2.0, bbox_for_height(h, 2.0, CALIB)) for h in heights]
    assert averaged_height(observations, CALIB) == pytest.approx(1.74, abs=1e-9)


def test_sixth_observation_slides_the_window():
    heights = [1.50, 1.70, 1.70, 1.70, 1.70, 1.70]
    observations = [HeightObservation(2.0, bbox_for_height(h, 2.0, CALIB)) for h in heights]
    got = averaged_height(observations, CALIB)
    assert got == pytest.approx(1.70, abs=1e-9)  # the 1.50 estimate dropped out


def test_averaged_height_needs_five():
    with pytest.raises(ValueError):
        averaged_height([HeightObservation(2.0, 400.0)] * 4, CALIB)


def test_shoulder_angles_endpoints_midpoint_clamp():
    left, right = shoulder_angles(CALIB.h_min, CALIB)
    assert left == CALIB.theta_min and right == CALIB.theta_min + CALIB.right_offset
    left, _ = shoulder_angles(CALIB.h_max, CALIB)
    assert left == CALIB.theta_max
    mid = (CALIB.h_min + CALIB.h_max) / 2
    left, _ = shoulder_angles(mid, CALIB)
    assert left == pytest.approx((CALIB.theta_min + CALIB.theta_max) / 2, abs=1e-12)
    assert shoulder_angles(2.10, CALIB) == shoulder_angles(CALIB.h_max, CALIB)
    assert shoulder_angles(1.02, CALIB) == shoulder_angles(CALIB.h_min, CALIB)


def test_shoulder_angles_monotone():
    heights = np.linspace(1.2, 2.1, 40)
    lefts = [shoulder_angles(float(h), CALIB)[0] for h in heights]
    assert all(b >= a for a, b in zip(lefts, lefts[1:]))


def test_calib_loading(tmp_path):
    path = tmp_path / "calib.cfg"
    path.write_text(
        "window_w = 50\n"               # engine key, ignored here
        "calib_theta_min = 22.0\n"
        "calib_theta_max = 55.0\n"
    )
    calib = load_calib(path)
    assert calib.theta_min == 22.0 and calib.theta_max == 55.0
    assert calib.focal_f == 651.55


def test_calib_rejects_unknown_and_invalid(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("calib_focal = 500\n")
    with pytest.raises(ConfigError, match="calib_focal"):
        load_calib(path)
    path.write_text("calib_h_min = 2.0\n")  # above h_max
    with pytest.raises(ConfigError, match="calib_h_min"):
        load_calib(path)
