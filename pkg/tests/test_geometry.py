import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pampose.data import gen_object
from pampose.geometry import (
    DegenerateRotationError,
    PointCloud,
    Pose,
    RankDeficiencyError,
    axis_angle_quat,
    compose_poses,
    icp,
    icp_align,
    kabsch,
    normalize_quat,
    quat_to_rotmat,
    random_quaternion,
    rotation_error_deg,
    rotmat_to_quat,
    transform_points,
    translation_error,
)

from oracles import homogeneous, horn_quaternion_alignment

seeds = st.integers(0, 2**31 - 1)


def random_pose(rng, t_scale=0.5) -> Pose:
    return Pose(random_quaternion(rng), rng.normal(scale=t_scale, size=3))


def test_identity_quaternion_gives_identity_matrix():
    np.testing.assert_array_equal(quat_to_rotmat([1.0, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    r = quat_to_rotmat([np.sqrt(0.5), 0, 0, np.sqrt(0.5)])
    np.testing.assert_allclose(r @ [1.0, 0, 0], [0, 1, 0], atol=1e-15)


def test_degenerate_quaternion():
    with pytest.raises(DegenerateRotationError):
        quat_to_rotmat([1e-13, 0, 0, 0])


@settings(max_examples=200)
@given(seeds)
def test_rotation_matrix_orthonormal(seed):
    r = quat_to_rotmat(random_quaternion(np.random.default_rng(seed)))
    assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-12
    assert abs(np.linalg.det(r) - 1.0) <= 1e-9


@settings(max_examples=200)
@given(seeds)
def test_pose_invariants(seed):
    rng = np.random.default_rng(seed)
    p = Pose(rng.normal(size=4) * rng.uniform(0.1, 10), rng.normal(size=3))
    assert abs(np.linalg.norm(p.rotation) - 1.0) <= 1e-9
    assert p.rotation[0] >= 0
    assert np.abs(p.R.T @ p.R - np.eye(3)).max() <= 1e-9


@settings(max_examples=100)
@given(seeds)
def test_normalize_is_idempotent_and_canonical(seed):
    q = normalize_quat(np.random.default_rng(seed).normal(size=4))
    np.testing.assert_array_equal(normalize_quat(q), q)
    np.testing.assert_allclose(normalize_quat(-q), q, atol=1e-15)


@settings(max_examples=100)
@given(seeds)
def test_rotmat_round_trip(seed):
    q = random_quaternion(np.random.default_rng(seed))
    np.testing.assert_allclose(rotmat_to_quat(quat_to_rotmat(q)), q, atol=1e-12)


def test_transform_identity_and_translation():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    feats = np.random.default_rng(1).uniform(size=(20, 3))
    cloud = PointCloud(pts, feats)
    same = transform_points(Pose.identity(), cloud)
    np.testing.assert_array_equal(same.points, pts)
    shifted = transform_points(Pose(translation=np.array([0, 0, 0.1])), cloud)
    np.testing.assert_allclose(shifted.points - pts, np.tile([0, 0, 0.1], (20, 1)), atol=1e-15)
    assert shifted.features is feats


def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


@settings(max_examples=100)
@given(seeds)
def test_transform_matches_homogeneous_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_pose(rng)
    pts = rng.normal(size=(30, 3))
    hom = np.hstack([pts, np.ones((30, 1))]) @ homogeneous(p.R, p.translation).T
    np.testing.assert_allclose(transform_points(p, pts), hom[:, :3], atol=1e-12, rtol=0)


def test_compose_with_identity_and_inverse():
    rng = np.random.default_rng(3)
    p = random_pose(rng)
    assert compose_poses(Pose.identity(), p) == p
    assert compose_poses(p, Pose.identity()) == p
    e = compose_poses(p, p.inverse())
    assert rotation_error_deg(e, Pose.identity()) <= 1e-6
    assert np.abs(e.translation).max() <= 1e-9


@settings(max_examples=100)
@given(seeds)
def test_composition_chain_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    poses = [random_pose(rng) for _ in range(4)]
    chain = poses[0]
    product = poses[0].matrix()
    for p in poses[1:]:
        chain = compose_poses(chain, p)
        product = product @ homogeneous(p.R, p.translation)
    np.testing.assert_allclose(chain.matrix(), product, atol=1e-10, rtol=0)


@settings(max_examples=100)
@given(seeds)
def test_composition_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    left = compose_poses(compose_poses(a, b), c)
    right = compose_poses(a, compose_poses(b, c))
    np.testing.assert_allclose(left.matrix(), right.matrix(), atol=1e-9, rtol=0)


@settings(max_examples=100)
@given(seeds)
def test_composition_acts_inner_first(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(
        transform_points(compose_poses(a, b), pts), transform_points(a, transform_points(b, pts)), atol=1e-10, rtol=0
    )


def test_pose_matmul_is_compose():
    rng = np.random.default_rng(4)
    a, b = random_pose(rng), random_pose(rng)
    assert a @ b == compose_poses(a, b)


def test_error_helpers():
    p = Pose(axis_angle_quat([0, 0, 1], np.radians(30)), np.array([0.0, 0.03, 0.04]))
    assert rotation_error_deg(p, Pose.identity()) == pytest.approx(30.0, abs=1e-9)
    assert translation_error(p, Pose.identity()) == pytest.approx(0.05, abs=1e-15)


def test_kabsch_matches_horn_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        src = rng.normal(size=(40, 3))
        dst = transform_points(random_pose(rng), src) + rng.normal(scale=0.01, size=(40, 3))
        r, t = horn_quaternion_alignment(src, dst)
        pose = kabsch(src, dst)
        np.testing.assert_allclose(pose.R, r, atol=1e-9)
        np.testing.assert_allclose(pose.translation, t, atol=1e-9)


def test_icp_self_alignment():
    pts = np.random.default_rng(6).normal(size=(50, 3))
    result = icp(pts, pts)
    assert result.pose == Pose.identity()
    assert result.residual == 0.0


def test_icp_single_iteration_equals_kabsch():
    rng = np.random.default_rng(7)
    src = rng.normal(size=(60, 3))
    dst = transform_points(Pose(axis_angle_quat([1, 2, 3], 0.05), np.array([0.01, 0, 0])), src)
    one_step = icp_align(src, dst, max_iters=1)
    closed = kabsch(src, dst)
    np.testing.assert_allclose(one_step.matrix(), closed.matrix(), atol=1e-12)


def test_icp_degenerate_source():
    with pytest.raises(RankDeficiencyError):
        icp(np.ones((10, 3)), np.random.default_rng(8).normal(size=(10, 3)))


def test_icp_argument_errors():
    pts = np.zeros((0, 3))
    with pytest.raises(ValueError):
        icp(pts, np.ones((3, 3)))
    with pytest.raises(ValueError):
        icp(np.eye(3), np.eye(3), max_iters=0)


def perturbed(rng, pose: Pose, max_deg=10.0, max_t=0.01) -> Pose:
    axis = rng.normal(size=3)
    angle = np.radians(rng.uniform(0, max_deg))
    shift = rng.normal(size=3)
    shift *= rng.uniform(0, max_t) / np.linalg.norm(shift)
    return compose_poses(Pose(axis_angle_quat(axis, angle), shift), pose)


def test_icp_recovers_ground_truth_on_box_scenes():
    for seed in range(10):
        rng = np.random.default_rng([seed, 55])
        model = gen_object("box", 500, seed)
        gt = Pose(random_quaternion(rng), rng.uniform(-0.1, 0.1, 3) + [0, 0, 0.6])
        target = transform_points(gt, model.points)
        est = icp_align(model.points, target, init=perturbed(rng, gt))
        assert rotation_error_deg(est, gt) < 0.1
        assert translation_error(est, gt) < 1e-4


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_icp_residual_never_increases(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(80, 3))
    dst = transform_points(random_pose(rng, 0.2), src) + rng.normal(scale=0.05, size=(80, 3))
    history = icp(src, dst, init=Pose.identity()).history
    assert all(b <= a for a, b in zip(history, history[1:]))
