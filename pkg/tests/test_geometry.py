import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from tactigrasp.geometry import (
    CAMERA_PERMUTATION,
    Calibration,
    CameraIntrinsics,
    DegenerateGeometryError,
    EmptyCloudError,
    EndEffectorPose,
    HandEyeTransform,
    InvalidDepthError,
    ObjectTooWideError,
    SegmentedCloud,
    Workspace,
    camera_to_base,
    check_workspace,
    compute_grasp,
    deproject,
    deproject_mm,
    load_calibration,
    read_xyz,
    reproject,
    rot_z,
    save_calibration,
    segment_cloud,
    write_xyz,
)

K600 = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 1280, 480)


def cylinder_cloud(radius, length, n_around=72, n_along=40, upper_only=False):
    """Points on a cylinder lying along x, axis at height `radius`."""
    ang = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    if upper_only:
        ang = ang[np.sin(ang) >= -0.05]
    xs = np.linspace(-length / 2, length / 2, n_along)
    a, x = np.meshgrid(ang, xs)
    return np.stack([x.ravel(), radius * np.cos(a).ravel(), radius + radius * np.sin(a).ravel()], 1)


def box_cloud(lx, ly, lz, step=0.004):
    """Points on the five visible faces of an axis-aligned box resting on z = 0."""
    gx = np.arange(-lx / 2, lx / 2 + 1e-9, step)
    gy = np.arange(-ly / 2, ly / 2 + 1e-9, step)
    gz = np.arange(0, lz + 1e-9, step)
    faces = []
    X, Y = np.meshgrid(gx, gy)
    faces.append(np.stack([X.ravel(), Y.ravel(), np.full(X.size, lz)], 1))
    for y in (-ly / 2, ly / 2):
        X, Z = np.meshgrid(gx, gz)
        faces.append(np.stack([X.ravel(), np.full(X.size, y), Z.ravel()], 1))
    for x in (-lx / 2, lx / 2):
        Y, Z = np.meshgrid(gy, gz)
        faces.append(np.stack([np.full(Y.size, x), Y.ravel(), Z.ravel()], 1))
    return np.concatenate(faces)


def matrix_deproject_mm(x, y, d, K):
    """Independent evaluation: permutation @ inv(intrinsics) @ [x, y, 1] * d."""
    return CAMERA_PERMUTATION @ np.linalg.inv(K.matrix) @ np.array([x, y, 1.0]) * d


# ---- deprojection ------------------------------------------------------------------


def test_principal_ray_unit_camera():
    K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
    np.testing.assert_allclose(deproject_mm(0, 0, 1, K), [1, 0, 0])


def test_principal_point_in_metres():
    np.testing.assert_allclose(deproject_mm(320, 240, 500, K600), [500, 0, 0])
    np.testing.assert_allclose(deproject(320, 240, 500, K600), [0.5, 0, 0])


def test_off_axis_pixel_matches_matrix_oracle():
    got = deproject_mm(920, 240, 600, K600)
    np.testing.assert_allclose(got, [600, 600, 0])
    np.testing.assert_allclose(got, matrix_deproject_mm(920, 240, 600, K600))


def test_invalid_depth_and_pixel_rejected():
    with pytest.raises(InvalidDepthError):
        deproject(10, 10, 0, K600)
    with pytest.raises(ValueError):
        deproject(2000, 10, 100, K600)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 5.0, 0.0, 4, 4)


@given(st.floats(0, 1279), st.floats(0, 479), st.floats(1, 10000))
def test_deproject_reproject_round_trip(x, y, d):
    p = deproject(x, y, d, K600)
    np.testing.assert_allclose(p * 1000, matrix_deproject_mm(x, y, d, K600), rtol=1e-12, atol=1e-9)
    rx, ry, rd = reproject(p, K600)
    assert abs(rx - x) < 1e-6 and abs(ry - y) < 1e-6 and abs(rd - d) < 1e-6


# ---- rigid chain -------------------------------------------------------------------


def test_identity_chain():
    ee = EndEffectorPose(np.eye(3), np.zeros(3))
    np.testing.assert_allclose(camera_to_base([0.1, 0.2, 0.3], ee, HandEyeTransform.identity()),
                               [0.1, 0.2, 0.3])


def test_pure_translation():
    ee = EndEffectorPose(np.eye(3), [1, 0, 0])
    np.testing.assert_allclose(camera_to_base([0, 0, 0], ee, HandEyeTransform.identity()), [1, 0, 0])


def test_quarter_turn_about_z():
    ee = EndEffectorPose(rot_z(90), np.zeros(3))
    got = camera_to_base([1, 0, 0], ee, HandEyeTransform.identity())
    np.testing.assert_allclose(got, [0, 1, 0], atol=1e-15)
    R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    np.testing.assert_allclose(got, R @ [1, 0, 0], atol=1e-15)


def test_chain_order_is_pose_then_hand_eye():
    ee = EndEffectorPose(rot_z(90), [1, 0, 0])
    hte = np.eye(4)
    hte[:3, 3] = [0, 0.5, 0]
    got = camera_to_base([0, 0, 0], ee, HandEyeTransform(hte))
    # hand-eye offset (0, 0.5, 0) rotated by +90 about z is (-0.5, 0, 0), then + (1, 0, 0)
    np.testing.assert_allclose(got, [0.5, 0, 0], atol=1e-15)


def test_non_rigid_inputs_rejected():
    with pytest.raises(ValueError):
        EndEffectorPose(np.diag([1, 1, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        EndEffectorPose(np.diag([1, 1, -1.0]), np.zeros(3))
    bad = np.eye(4)
    bad[3, 0] = 1
    with pytest.raises(ValueError):
        HandEyeTransform(bad)


def random_rigid(seed):
    rng = np.random.default_rng(seed)
    r1 = Rotation.random(random_state=rng).as_matrix()
    r2 = Rotation.random(random_state=rng).as_matrix()
    hte = np.eye(4)
    hte[:3, :3] = r2
    hte[:3, 3] = rng.uniform(-1, 1, 3)
    return EndEffectorPose(r1, rng.uniform(-1, 1, 3)), HandEyeTransform(hte), rng


@given(st.integers(0, 2**32 - 1))
def test_chain_is_an_isometry(seed):
    ee, hte, rng = random_rigid(seed)
    a, b = rng.uniform(-2, 2, (2, 3))
    ta, tb = camera_to_base(np.stack([a, b]), ee, hte)
    assert abs(np.linalg.norm(ta - tb) - np.linalg.norm(a - b)) < 1e-9


# ---- segmentation ------------------------------------------------------------------


def test_single_pixel_cloud():
    mask = np.zeros((480, 1280), bool)
    depth = np.zeros((480, 1280), np.uint16)
    mask[10, 10] = True
    depth[10, 10] = 700
    cloud = segment_cloud(mask, depth, K600, "glass")
    assert cloud.points.shape == (1, 3)
    np.testing.assert_allclose(cloud.points[0], deproject(10, 10, 700, K600))
    assert cloud.class_label == "glass"


def test_invalid_depths_dropped():
    mask = np.zeros((480, 1280), bool)
    mask[0:4, 0:5] = True
    depth = np.full((480, 1280), 650, np.uint16)
    depth[0, 0:3] = 0
    cloud = segment_cloud(mask, depth, K600)
    assert len(cloud.points) == 17
    assert cloud.valid_fraction == pytest.approx(17 / 20)


def test_all_invalid_depths_is_an_error():
    mask = np.ones((4, 4), bool)
    K = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 4, 4)
    with pytest.raises(EmptyCloudError):
        segment_cloud(mask, np.zeros((4, 4)), K)
    with pytest.raises(ValueError):
        segment_cloud(mask, np.zeros((4, 5)), K)


def test_tilted_plane_cloud_is_planar():
    K = CameraIntrinsics(300.0, 300.0, 80.0, 60.0, 160, 120)
    v, u = np.mgrid[0:120, 0:160].astype(float)
    rx, ry = (u - K.cx) / K.fx, (v - K.cy) / K.fy
    # plane 0.2 * rx_mm + 0.1 * ry_mm + z_mm = 800 in ray coordinates
    depth = 800.0 / (0.2 * rx + 0.1 * ry + 1.0)
    cloud = segment_cloud(np.ones((120, 160), bool), depth, K)
    centred = cloud.points - cloud.points.mean(axis=0)
    normal = np.linalg.svd(centred, full_matrices=False)[2][-1]
    rms = np.sqrt(np.mean((centred @ normal) ** 2))
    assert rms < 1e-9


# ---- grasp computation -------------------------------------------------------------


def test_cylinder_grasp_spans_diameter():
    pts = cylinder_cloud(0.030, 0.12)
    g = compute_grasp(pts)
    assert abs(g.opening_required_mm - 60.0) <= 2.0
    # the pair straddles the axis (y = 0) and sits near the centroid
    assert g.p1[1] * g.p2[1] < 0
    assert np.linalg.norm(g.midpoint - pts.mean(axis=0)) * 1000 <= 3.0
    np.testing.assert_allclose(g.approach, [0, 0, -1])


def test_cylinder_seen_from_above_only():
    # a depth camera sees the upper half; the centroid rises but the width does not
    pts = cylinder_cloud(0.030, 0.12, upper_only=True)
    g = compute_grasp(pts)
    assert abs(g.opening_required_mm - 60.0) <= 2.0
    assert np.linalg.norm((g.midpoint - pts.mean(axis=0))[:2]) * 1000 <= 3.0
    # only the visible upper rim falls inside the contact band: at most sqrt(2 r band) above the axis
    rise_mm = (g.midpoint[2] - 0.030) * 1000
    assert 0.0 <= rise_mm <= np.sqrt(2 * 30.0 * 2.0)


def test_large_sphere_too_wide():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(4000, 3))
    v[:, 2] = np.abs(v[:, 2])
    pts = 0.08 * v / np.linalg.norm(v, axis=1, keepdims=True)
    with pytest.raises(ObjectTooWideError):
        compute_grasp(pts)


def test_long_box_grasped_across_narrow_side():
    g = compute_grasp(box_cloud(0.118, 0.040, 0.040))
    assert abs(g.opening_required_mm - 40.0) <= 2.0
    assert g.opening_required_mm <= 140.0


def test_degenerate_clouds_rejected():
    with pytest.raises(DegenerateGeometryError):
        compute_grasp(np.zeros((10, 3)))
    line = np.stack([np.linspace(0, 0.1, 100), np.zeros(100), np.zeros(100)], 1)
    with pytest.raises(DegenerateGeometryError):
        compute_grasp(line)
    with pytest.raises(DegenerateGeometryError):
        compute_grasp(np.tile([0.1, 0.2, 0.3], (80, 1)))


def test_grasp_accepts_segmented_cloud():
    pts = box_cloud(0.1, 0.05, 0.03)
    a = compute_grasp(SegmentedCloud(pts, "cardboard"))
    b = compute_grasp(pts)
    np.testing.assert_allclose(a.p1, b.p1)


def test_pre_position_is_above_the_target():
    g = compute_grasp(box_cloud(0.1, 0.05, 0.03))
    np.testing.assert_allclose(g.pre_position() - g.midpoint, [0, 0, 0.1])


def _same_pair(g, p1, p2, tol_m=1e-3):
    d1 = max(np.linalg.norm(g.p1 - p1), np.linalg.norm(g.p2 - p2))
    d2 = max(np.linalg.norm(g.p1 - p2), np.linalg.norm(g.p2 - p1))
    return min(d1, d2) <= tol_m


@given(st.integers(0, 2**32 - 1))
def test_grasp_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    pts = box_cloud(0.11, 0.05, 0.04) + rng.normal(0, 2e-4, (1, 3))
    base = compute_grasp(pts)
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.uniform(-1, 1, 3)
    moved = compute_grasp(pts @ R.T + t, vertical=R @ [0, 0, 1])
    assert _same_pair(moved, R @ base.p1 + t, R @ base.p2 + t)


@given(st.floats(0, 360), st.integers(0, 2**32 - 1))
def test_grasp_separation_never_exceeds_limit(yaw, seed):
    rng = np.random.default_rng(seed)
    dims = rng.uniform(0.02, 0.2, 3)
    pts = box_cloud(*dims, step=0.006) @ rot_z(yaw).T
    try:
        g = compute_grasp(pts)
    except ObjectTooWideError:
        assert min(dims[:2]) * 1000 > 140.0 - 2.0
        return
    assert g.opening_required_mm <= 140.0


# ---- workspace, files ----------------------------------------------------------------


def test_workspace_membership():
    ws = Workspace()
    assert check_workspace([0.45, 0.0, 0.0], ws)
    assert not check_workspace([1.45, 0.0, 0.0], ws)
    assert check_workspace([0.45 + 0.3, 0.25, 0.0], ws)
    assert not check_workspace([0.45 + 0.3001, 0.0, 0.0], ws)


def test_xyz_round_trip(tmp_path, rng):
    pts = rng.normal(size=(20, 3))
    write_xyz(tmp_path / "c.xyz", pts)
    np.testing.assert_array_equal(read_xyz(tmp_path / "c.xyz"), pts)
    (tmp_path / "bad.xyz").write_text("1 2\n", encoding="ascii")
    with pytest.raises(ValueError):
        read_xyz(tmp_path / "bad.xyz")


def test_calibration_round_trip(tmp_path):
    hte = np.eye(4)
    hte[:3, :3] = rot_z(30)
    hte[:3, 3] = [0.01, 0.02, 0.03]
    calib = Calibration(K600, HandEyeTransform(hte), Workspace((0.5, 0.1), (600, 500), (0, 0.2)))
    save_calibration(tmp_path / "calib.yaml", calib)
    back = load_calibration(tmp_path / "calib.yaml")
    assert back.intrinsics == K600
    np.testing.assert_array_equal(back.hand_eye.matrix, hte)
    assert back.workspace == calib.workspace
