import numpy as np
import pytest

from egoplan import formats
from egoplan.geometry import PointCloud
from egoplan.transforms import Pose


def test_pointcloud_roundtrip(tmp_path):
    gen = np.random.default_rng(1)
    pts = gen.normal(size=(257, 3)).astype(np.float32).astype(float)
    cloud = PointCloud(pts, "exocentric")
    path = tmp_path / "cloud.bin"
    formats.write_pointcloud(cloud, path)
    back = formats.read_pointcloud(path)
    assert back.provenance == "exocentric"
    np.testing.assert_array_equal(back.points, pts)  # float32 values survive exactly

    header = path.read_bytes()[:13]
    assert header[:4] == b"PCLB"
    assert int.from_bytes(header[4:8], "little") == 1
    assert int.from_bytes(header[8:12], "little") == 257
    assert header[12] == 1  # exocentric provenance code


def test_pointcloud_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(formats.FormatError, match="magic"):
        formats.read_pointcloud(path)


def test_depth_batch_roundtrip(tmp_path):
    gen = np.random.default_rng(2)
    path = tmp_path / "frames.bin"
    frames = []
    with formats.DepthBatchWriter(path) as writer:
        for i in range(5):
            pose = Pose.from_axis_angle([0, 0, 1], 0.1 * i, gen.normal(size=3))
            zones = gen.uniform(0.1, 4.0, size=(8, 8))
            writer.add_frame(i, 7, pose, zones)
            frames.append((i, pose, zones))
    back = formats.read_depth_batch(path)
    assert len(back) == 5
    for (mid, pose, zones), (rmid, rt, rpose, rzones) in zip(frames, back):
        assert rmid == mid and rt == 7
        assert rzones.shape == (8, 8)
        np.testing.assert_array_equal(rzones, zones.astype(np.float32))
        np.testing.assert_allclose(rpose.translation, pose.translation, atol=1e-6)


def test_records_roundtrip_and_errors(tmp_path):
    path = tmp_path / "records.jsonl"
    records = [{"scenario_id": "a", "t": 0, "q": [0.5] * 14, "obs_ref": 0}]
    formats.write_records(records, path)
    assert list(formats.read_records(path)) == records

    path.write_text('{"ok": 1}\n{broken\n')
    with pytest.raises(formats.FormatError, match=":2"):
        list(formats.read_records(path))
