"""Readers for the benchmark's dataset files.

The trainer consumes two documented artifacts and nothing else:

- ``records.jsonl``: one JSON object per line with
  {scenario_id, t, q[14], g[14], chunk[15][14], obs_ref};
- ``frames.bin``: the depth-frame sidecar (magic ``DFRB``, version u32,
  frame count u32; per frame mount_id u32, t_index u32, pose 7xf32,
  zones_y u16, zones_x u16, zones float32 row-major). One observation is
  a block of consecutive frames, indexed by obs_ref.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

DEPTH_MAGIC = b"DFRB"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    scenario_id: str
    t: int
    q: np.ndarray
    g: np.ndarray
    chunk: np.ndarray
    obs_ref: int


def read_records(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                node = json.loads(line)
                record = Record(
                    scenario_id=str(node["scenario_id"]),
                    t=int(node["t"]),
                    q=np.asarray(node["q"], dtype=np.float32),
                    g=np.asarray(node["g"], dtype=np.float32),
                    chunk=np.asarray(node["chunk"], dtype=np.float32),
                    obs_ref=int(node["obs_ref"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if record.q.shape != (14,) or record.g.shape != (14,) or record.chunk.ndim != 2:
                raise DatasetError(f"{path}:{lineno}: record has bad shapes")
            records.append(record)
    if not records:
        raise DatasetError(f"{path}: dataset is empty")
    return records


def read_depth_frames(path) -> list:
    """All frames in file order as (mount_id, zones float32 (ny, nx))."""
    frames = []
    with open(path, "rb") as fh:
        if fh.read(4) != DEPTH_MAGIC:
            raise DatasetError(f"{path}: bad magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise DatasetError(f"{path}: unsupported version {version}")
        for _ in range(count):
            header = fh.read(8 + 28 + 4)
            if len(header) < 40:
                raise DatasetError(f"{path}: truncated frame header")
            mount_id, _t = struct.unpack("<II", header[:8])
            ny, nx = struct.unpack("<HH", header[36:40])
            payload = fh.read(4 * ny * nx)
            if len(payload) < 4 * ny * nx:
                raise DatasetError(f"{path}: truncated frame payload")
            zones = np.frombuffer(payload, dtype="<f4").reshape(ny, nx)
            frames.append((mount_id, zones))
    return frames


class ChunkDataset:
    """In-memory dataset pairing records with their observation blocks."""

    def __init__(self, records_path, frames_path, frames_per_obs: int):
        self.records = read_records(records_path)
        frames = read_depth_frames(frames_path)
        n_obs = max(r.obs_ref for r in self.records) + 1
        if len(frames) != n_obs * frames_per_obs:
            raise DatasetError(
                f"{frames_path}: expected {n_obs * frames_per_obs} frames "
                f"({n_obs} observations x {frames_per_obs}), found {len(frames)}"
            )
        shape = frames[0][1].shape
        self.depths = np.zeros((n_obs, frames_per_obs) + shape, dtype=np.float32)
        for block in range(n_obs):
            chunk = frames[block * frames_per_obs : (block + 1) * frames_per_obs]
            order = sorted(range(frames_per_obs), key=lambda i: chunk[i][0])
            for slot, i in enumerate(order):
                self.depths[block, slot] = chunk[i][1]

    def __len__(self) -> int:
        return len(self.records)

    def tensors(self, indices):
        """(q, g, depths, chunk) float32 arrays for the given indices."""
        qs = np.stack([self.records[i].q for i in indices])
        gs = np.stack([self.records[i].g for i in indices])
        chunks = np.stack([self.records[i].chunk for i in indices])
        depths = np.stack([self.depths[self.records[i].obs_ref] for i in indices])
        return qs, gs, depths, chunks
