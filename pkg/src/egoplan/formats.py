"""Binary and line-delimited artifact formats.

Point clouds
    header: magic ``PCLB`` (4 bytes), version u32, count u32,
    provenance u8 (0 egocentric, 1 exocentric, 2 synthetic); payload:
    count * 3 little-endian float32.

Depth-frame batches
    header: magic ``DFRB`` (4 bytes), version u32, frame count u32;
    per frame: mount_id u32, t_index u32, pose as 7 float32
    (qw qx qy qz tx ty tz), zones_y u16, zones_x u16, then
    zones_y * zones_x row-major float32 depths.

Dataset records
    one JSON object per line with keys
    {scenario_id, t, q[14], g[14], chunk[15][14], obs_ref}; the
    referenced depth frames live in the sidecar batch file, grouped in
    blocks of one rig observation, with obs_ref the block index.

Depths are stored as float32 (in-memory frames are float64); all
integers are little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .geometry import PointCloud
from .transforms import Pose, quat_normalize

POINTCLOUD_MAGIC = b"PCLB"
DEPTH_MAGIC = b"DFRB"
FORMAT_VERSION = 1

_PROVENANCE_CODE = {"egocentric": 0, "exocentric": 1, "synthetic": 2}
_PROVENANCE_NAME = {v: k for k, v in _PROVENANCE_CODE.items()}


class FormatError(ValueError):
    pass


def write_pointcloud(cloud: PointCloud, path):
    pts = np.asarray(cloud.points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(POINTCLOUD_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, pts.shape[0]))
        fh.write(struct.pack("<B", _PROVENANCE_CODE[cloud.provenance]))
        fh.write(pts.tobytes())


def read_pointcloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != POINTCLOUD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (prov,) = struct.unpack("<B", fh.read(1))
        if prov not in _PROVENANCE_NAME:
            raise FormatError(f"{path}: unknown provenance code {prov}")
        data = np.frombuffer(fh.read(count * 12), dtype="<f4")
        if data.size != count * 3:
            raise FormatError(f"{path}: truncated payload")
    return PointCloud(data.astype(float).reshape(count, 3), _PROVENANCE_NAME[prov])


class DepthBatchWriter:
    """Sequential writer; the frame count is patched into the header on close."""

    def __init__(self, path):
        self._fh = open(path, "wb")
        self._count = 0
        self._fh.write(DEPTH_MAGIC)
        self._fh.write(struct.pack("<II", FORMAT_VERSION, 0))

    def add_frame(self, mount_id: int, t_index: int, pose: Pose, zones: np.ndarray):
        zones = np.asarray(zones, dtype="<f4")
        ny, nx = zones.shape
        self._fh.write(struct.pack("<II", mount_id, t_index))
        pose7 = np.concatenate([pose.rotation, pose.translation]).astype("<f4")
        self._fh.write(pose7.tobytes())
        self._fh.write(struct.pack("<HH", ny, nx))
        self._fh.write(zones.tobytes())
        self._count += 1

    def close(self):
        self._fh.seek(8)
        self._fh.write(struct.pack("<I", self._count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_depth_batch(path) -> list:
    """Returns a list of (mount_id, t_index, Pose, zones float32 array)."""
    out = []
    with open(path, "rb") as fh:
        if fh.read(4) != DEPTH_MAGIC:
            raise FormatError(f"{path}: bad magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        for _ in range(count):
            mount_id, t_index = struct.unpack("<II", fh.read(8))
            pose7 = np.frombuffer(fh.read(28), dtype="<f4").astype(float)
            ny, nx = struct.unpack("<HH", fh.read(4))
            zones = np.frombuffer(fh.read(4 * ny * nx), dtype="<f4").reshape(ny, nx)
            # float32 storage perturbs the unit norm in the last bits
            pose = Pose(quat_normalize(pose7[:4]), pose7[4:])
            out.append((mount_id, t_index, pose, zones))
    return out


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")


def read_records(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
