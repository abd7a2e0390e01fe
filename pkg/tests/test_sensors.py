import numpy as np
import pytest

from armplan import arm, geometry, sensors, tasks

GEOM = arm.load_arm()
EMPTY = tasks.build_fixed_task("no_obstacles")
RIG = sensors.default_rig(rays_per_sensor=800)  # desk-scale rig for tests


def surface_distance(scene, c, point, label):
    """|signed distance| from a point to the body class it was labeled with."""
    best = np.inf
    if label == sensors.LABEL_ROBOT and c is not None:
        e0, e1, radii, _ = arm.world_capsules_batch(np.asarray(c)[None], scene.arm)
        for a, b, r in zip(e0[0], e1[0], radii):
            ab = b - a
            t = np.clip((point - a) @ ab / (ab @ ab), 0, 1)
            best = min(best, abs(np.linalg.norm(point - (a + t * ab)) - r))
        return best
    want = geometry.STATIC if label == sensors.LABEL_STATIC else geometry.VARYING
    for plane in scene.planes:
        if plane.label == want:
            best = min(best, abs(point @ plane.normal - plane.offset))
    for box in scene.boxes:
        if box.label == want:
            cy, sy = np.cos(box.yaw), np.sin(box.yaw)
            rel = point - box.center
            local = np.array(
                [cy * rel[0] + sy * rel[1], -sy * rel[0] + cy * rel[1], rel[2]]
            )
            outside = np.linalg.norm(np.maximum(np.abs(local) - box.half_extents, 0.0))
            inside = np.max(np.abs(local) - box.half_extents)
            best = min(best, outside if outside > 0 else abs(inside))
    return best


class TestSense:
    def test_empty_scene_without_arm_is_all_static(self):
        cloud = sensors.sense(EMPTY, None, RIG)
        assert len(cloud) > 0
        assert (cloud.labels == sensors.LABEL_STATIC).all()

    def test_floating_box_points_on_surface(self):
        box = geometry.Box([0.0, 0.0, 0.5], [0.15, 0.12, 0.1], 0.3)
        scene = geometry.Scene("float", (box,), arm=GEOM)
        cloud = sensors.sense(scene, None, RIG)
        assert len(cloud) > 0
        assert (cloud.labels == sensors.LABEL_VARYING).all()
        for p in cloud.points[:: max(1, len(cloud) // 50)]:
            assert surface_distance(scene, None, p, sensors.LABEL_VARYING) < 1e-6

    def test_deterministic(self):
        c = GEOM.home
        a = sensors.sense(EMPTY, c, RIG)
        b = sensors.sense(EMPTY, c, RIG)
        assert (a.points == b.points).all()
        assert (a.labels == b.labels).all()
        assert (a.sensors == b.sensors).all()

    def test_rig_defaults(self):
        rig = sensors.default_rig()
        assert rig.rays_per_sensor == 10_000
        assert rig.origins.shape == (4, 3)
        np.testing.assert_allclose(np.linalg.norm(rig.origins[:, :2], axis=1), 1.5)

    def test_point_count_bounded_by_rays(self):
        cloud = sensors.sense(EMPTY, GEOM.home, RIG)
        for k in range(4):
            assert (cloud.sensors == k).sum() <= RIG.rays_per_sensor

    def test_arm_points_present_and_on_surface(self):
        scene = tasks.build_fixed_task("boxes")
        cloud = sensors.sense(scene, GEOM.home, RIG)
        robot = cloud.points[cloud.labels == sensors.LABEL_ROBOT]
        assert len(robot) > 0
        for p in robot[:: max(1, len(robot) // 30)]:
            assert surface_distance(scene, GEOM.home, p, sensors.LABEL_ROBOT) < 1e-6

    def test_all_label_classes_in_varied_scene(self):
        scene = tasks.sample_random_boxes("medium", np.random.default_rng(3))
        cloud = sensors.sense(scene, GEOM.home, RIG)
        present = set(np.unique(cloud.labels))
        assert {sensors.LABEL_ROBOT, sensors.LABEL_STATIC, sensors.LABEL_VARYING} <= present

    def test_every_point_on_exactly_its_body(self):
        scene = tasks.sample_random_boxes("easy", np.random.default_rng(5))
        cloud = sensors.sense(scene, GEOM.home, RIG)
        step = max(1, len(cloud) // 100)
        for p, lab in zip(cloud.points[::step], cloud.labels[::step]):
            assert surface_distance(scene, GEOM.home, p, lab) < 1e-6

    def test_occlusion_no_points_behind_box(self):
        # a big box in front of sensor 0 shadows everything behind it
        wall = geometry.Box([1.0, 0.0, 0.8], [0.02, 0.5, 0.5], 0.0)
        scene = geometry.Scene("occl", EMPTY.obstacles + (wall,), arm=GEOM)
        cloud = sensors.sense(scene, None, RIG)
        from_sensor0 = cloud.points[cloud.sensors == 0]
        hit_wall = from_sensor0[np.abs(from_sensor0[:, 0] - 1.02) < 1e-6]
        assert len(hit_wall) > 0  # the wall is seen from its near face


class TestCloudIO:
    def test_round_trip(self, tmp_path):
        cloud = sensors.sense(EMPTY, GEOM.home, RIG)
        path = tmp_path / "cloud.txt"
        sensors.save_cloud(path, cloud)
        loaded = sensors.load_cloud(path)
        assert (loaded.points == cloud.points).all()
        assert (loaded.labels == cloud.labels).all()
        assert (loaded.sensors == cloud.sensors).all()

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "cloud.txt"
        path.write_text("schema_version 1\ncount 1\n0.0 0.0 0.0 blob 0\n")
        with pytest.raises(tasks.ParseError, match="label"):
            sensors.load_cloud(path)
