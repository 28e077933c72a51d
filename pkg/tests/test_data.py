import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pampose.data import (
    SHAPE_LABELS,
    DegenerateSceneError,
    FormatError,
    PoseRange,
    gen_object,
    gen_scene,
    gen_shape_sample,
    read_cloud,
    read_pose,
    write_cloud,
    write_pose,
)
from pampose.geometry import PointCloud, Pose, icp_align, random_quaternion, rotation_error_deg, transform_points, translation_error

from test_geometry import perturbed

seeds = st.integers(0, 2**31 - 1)


def test_sphere_diameter_within_sampling_tolerance():
    for m in (100, 400, 1600):
        obj = gen_object("sphere", m, 0, size=(1.0,))
        assert obj.diameter <= 1.0 + 1e-12
        assert abs(obj.diameter - 1.0) <= 2 / math.sqrt(m)


def test_box_diameter_is_exact_diagonal():
    obj = gen_object("box", 50, 3, size=(0.1, 0.2, 0.3))
    assert obj.diameter == pytest.approx(math.sqrt(0.01 + 0.04 + 0.09), abs=1e-15)


def test_generators_are_deterministic():
    a, b = gen_object("cylinder", 80, 5), gen_object("cylinder", 80, 5)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.colors, b.colors)
    s1, s2 = gen_scene(a, occlusion=0.3, noise_sigma=0.001, seed=9), gen_scene(b, occlusion=0.3, noise_sigma=0.001, seed=9)
    np.testing.assert_array_equal(s1.cloud.points, s2.cloud.points)
    assert s1.gt == s2.gt


def test_symmetry_flags_and_arguments():
    assert gen_object("sphere", 10, 0).symmetric
    assert gen_object("cylinder", 10, 0).symmetric
    assert not gen_object("box", 10, 0).symmetric
    with pytest.raises(ValueError):
        gen_object("box", 3, 0)
    with pytest.raises(ValueError):
        gen_object("torus", 10, 0)


def test_points_lie_on_surfaces():
    s = gen_object("sphere", 200, 1, size=(0.08,))
    np.testing.assert_allclose(np.linalg.norm(s.points, axis=1), 0.04, atol=1e-15)
    b = gen_object("box", 200, 1, size=(0.1, 0.06, 0.04))
    half = np.array([0.05, 0.03, 0.02])
    on_face = np.isclose(np.abs(b.points), half, atol=1e-15).any(axis=1)
    assert on_face.all() and (np.abs(b.points) <= half + 1e-15).all()
    c = gen_object("cylinder", 200, 1, size=(0.03, 0.1))
    r = np.hypot(c.points[:, 0], c.points[:, 1])
    side, cap = np.isclose(r, 0.03), np.isclose(np.abs(c.points[:, 2]), 0.05)
    assert (side | cap).all() and (r <= 0.03 + 1e-15).all()


def test_colors_in_unit_cube():
    for kind in SHAPE_LABELS:
        col = gen_object(kind, 300, 2).colors
        assert col.shape == (300, 3) and col.min() >= 0 and col.max() <= 1


def test_clean_scene_is_transformed_model():
    obj = gen_object("box", 100, 0)
    s = gen_scene(obj, seed=4)
    np.testing.assert_array_equal(s.cloud.points, transform_points(s.gt, obj.points))
    np.testing.assert_array_equal(s.cloud.features, obj.colors)


@pytest.mark.parametrize("m", [100, 101, 37])
def test_half_occlusion_point_count(m):
    s = gen_scene(gen_object("sphere", m, 0), occlusion=0.5, seed=1)
    assert len(s.cloud) == math.ceil(0.5 * m)


def test_occlusion_cuts_with_a_plane():
    obj = gen_object("sphere", 400, 0)
    s = gen_scene(obj, occlusion=0.4, seed=2)
    posed = transform_points(s.gt, obj.points)
    dropped = np.setdiff1d(np.arange(400), s.model_indices)
    # some direction separates kept and dropped points
    kept_c, drop_c = posed[s.model_indices].mean(0), posed[dropped].mean(0)
    d = (drop_c - kept_c) / np.linalg.norm(drop_c - kept_c)
    assert (posed[s.model_indices] @ d).max() <= (posed[dropped] @ d).min() + 0.02


def test_noise_statistics_oracle():
    # each coordinate gets N(0, s^2) noise; |noise| then has mean s * sqrt(2/pi) * sqrt(3) to within ~9%
    sigma = 0.001
    obj = gen_object("box", 1000, 0)
    s = gen_scene(obj, noise_sigma=sigma, seed=3)
    dist = np.linalg.norm(s.cloud.points - transform_points(s.gt, obj.points), axis=1).mean()
    expected = sigma * math.sqrt(2 / math.pi) * math.sqrt(3)
    assert abs(dist - expected) <= 0.2 * expected


def test_scene_argument_errors():
    obj = gen_object("box", 10, 0)
    with pytest.raises(ValueError):
        gen_scene(obj, occlusion=0.95)
    with pytest.raises(DegenerateSceneError):
        gen_scene(obj, occlusion=0.5)


@settings(max_examples=100)
@given(seeds)
def test_pose_range_respected(seed):
    pr = PoseRange()
    p = pr.sample(np.random.default_rng(seed))
    assert np.all(p.translation >= pr.translation_low) and np.all(p.translation <= pr.translation_high)
    small = PoseRange(max_rotation_deg=20.0).sample(np.random.default_rng(seed))
    assert rotation_error_deg(small, Pose(translation=small.translation)) <= 20.0 + 1e-9


def test_icp_recovers_scene_ground_truth():
    for seed in range(5):
        obj = gen_object("box", 300, seed)
        s = gen_scene(obj, seed=seed)
        est = icp_align(obj.points, s.cloud.points, init=perturbed(np.random.default_rng(seed), s.gt))
        assert rotation_error_deg(est, s.gt) < 0.1 and translation_error(est, s.gt) < 1e-4


def test_shape_samples_normalized():
    for label in range(3):
        pts = gen_shape_sample(label, 64, label)
        assert pts.shape == (64, 3)
        np.testing.assert_allclose(pts.mean(0), 0, atol=1e-15)
        assert np.linalg.norm(pts, axis=1).max() == pytest.approx(1.0, abs=1e-15)


def test_upright_shape_samples_keep_the_up_axis():
    # upright cylinders keep their caps horizontal: many points share the top z
    cyl = SHAPE_LABELS.index("cylinder")

    def top_count(pts):
        return int(np.sum(np.isclose(pts[:, 2], pts[:, 2].max(), rtol=0, atol=1e-12)))

    for seed in range(5):
        assert top_count(gen_shape_sample(cyl, 256, seed, noise_sigma=0.0)) > 10
        assert top_count(gen_shape_sample(cyl, 256, seed, noise_sigma=0.0, upright=False)) < 3


# IO


@settings(max_examples=25, deadline=None)
@given(seeds, st.booleans())
def test_cloud_round_trip_bit_identical(tmp_path_factory, seed, with_features):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 50))
    cloud = PointCloud(rng.normal(size=(n, 3)) * 10.0 ** rng.uniform(-8, 3), rng.uniform(size=(n, 3)) if with_features else None)
    path = tmp_path_factory.mktemp("ply") / "c.ply"
    write_cloud(path, cloud)
    back = read_cloud(path)
    np.testing.assert_array_equal(back.points, cloud.points)
    if with_features:
        np.testing.assert_array_equal(back.features, cloud.features)
    else:
        assert back.features is None


def test_pose_round_trip_and_identity(tmp_path):
    p = Pose(random_quaternion(np.random.default_rng(0)), np.array([0.1, -0.2, 0.7]))
    write_pose(tmp_path / "p.pose", p)
    back = read_pose(tmp_path / "p.pose")
    np.testing.assert_array_equal(back.rotation, p.rotation)
    np.testing.assert_array_equal(back.translation, p.translation)
    (tmp_path / "id.pose").write_text("1 0 0 0 0 0 0\n")
    assert read_pose(tmp_path / "id.pose") == Pose.identity()


def test_pose_format_errors(tmp_path):
    f = tmp_path / "bad.pose"
    f.write_text("# comment\n1 0 0 0 0 0\n")
    with pytest.raises(FormatError) as e:
        read_pose(f)
    assert e.value.line == 2
    f.write_text("1 0 0 x 0 0 0\n")
    with pytest.raises(FormatError) as e:
        read_pose(f)
    assert (e.value.line, e.value.column) == (1, 4)


def test_cloud_format_errors(tmp_path):
    good = tmp_path / "good.ply"
    write_cloud(good, PointCloud(np.zeros((3, 3))))
    lines = good.read_text().splitlines()
    bad = tmp_path / "bad.ply"
    bad.write_text("\n".join(lines[:-2] + ["0.0 oops 0.0", lines[-1]]) + "\n")
    with pytest.raises(FormatError) as e:
        read_cloud(bad)
    assert (e.value.line, e.value.column) == (len(lines) - 1, 2)
    assert f":{len(lines) - 1}:" in str(e.value)
    bad.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        read_cloud(bad)
    bad.write_text("plx\n")
    with pytest.raises(FormatError) as e:
        read_cloud(bad)
    assert e.value.line == 1
