import json
import shutil
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

DEPTH_MAGIC = b"DFRB"


def write_frames_bin(path, blocks):
    """blocks: list of lists of (mount_id, zones float32 (ny, nx))."""
    with open(path, "wb") as fh:
        total = sum(len(b) for b in blocks)
        fh.write(DEPTH_MAGIC + struct.pack("<II", 1, total))
        for block in blocks:
            for mount_id, zones in block:
                zones = np.asarray(zones, dtype="<f4")
                ny, nx = zones.shape
                fh.write(struct.pack("<II", mount_id, 0))
                fh.write(np.array([1, 0, 0, 0, 0, 0, 0], dtype="<f4").tobytes())
                fh.write(struct.pack("<HH", ny, nx))
                fh.write(zones.tobytes())


def write_synthetic_dataset(out_dir, n_records=8, frames_per_obs=40, zones=8, seed=0):
    """Minimal dataset in the documented wire formats, no simulator needed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = np.random.default_rng(seed)
    blocks = []
    with open(out_dir / "records.jsonl", "w") as fh:
        for i in range(n_records):
            q = gen.uniform(-1, 1, 14)
            g = gen.uniform(-1, 1, 14)
            chunk = np.linspace(q, g, 15)
            node = {
                "scenario_id": f"syn-{i:03d}",
                "t": i,
                "q": [float(v) for v in q],
                "g": [float(v) for v in g],
                "chunk": [[float(v) for v in row] for row in chunk],
                "obs_ref": i,
            }
            fh.write(json.dumps(node, sort_keys=True) + "\n")
            blocks.append(
                [(m, gen.uniform(0.1, 4.0, (zones, zones)).astype(np.float32)) for m in range(frames_per_obs)]
            )
    write_frames_bin(out_dir / "frames.bin", blocks)
    return out_dir


def _parse_raw_frames(path):
    buf = Path(path).read_bytes()
    assert buf[:4] == DEPTH_MAGIC
    _, count = struct.unpack("<II", buf[4:12])
    off = 12
    frames = []
    for _ in range(count):
        start = off
        off += 8 + 28
        ny, nx = struct.unpack("<HH", buf[off : off + 4])
        off += 4 + 4 * ny * nx
        frames.append(buf[start:off])
    return frames


def slice_dataset(src_dir, dst_dir, n_records, frames_per_obs=40):
    """First n records of a dataset, with obs_refs renumbered."""
    src_dir, dst_dir = Path(src_dir), Path(dst_dir)
    dst_dir.mkdir(parents=True, exist_ok=True)
    lines = (src_dir / "records.jsonl").read_text().strip().split("\n")[:n_records]
    frames = _parse_raw_frames(src_dir / "frames.bin")
    out_lines = []
    out_frames = []
    for new_ref, line in enumerate(lines):
        node = json.loads(line)
        old = node["obs_ref"]
        out_frames.extend(frames[old * frames_per_obs : (old + 1) * frames_per_obs])
        node["obs_ref"] = new_ref
        out_lines.append(json.dumps(node, sort_keys=True, separators=(",", ":")))
    (dst_dir / "records.jsonl").write_text("\n".join(out_lines) + "\n")
    with open(dst_dir / "frames.bin", "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", 1, len(out_frames)))
        for frame in out_frames:
            fh.write(frame)
    return dst_dir


@pytest.fixture(scope="session")
def simulator_cli():
    path = shutil.which("egoplan")
    if path is None:
        pytest.skip("the egoplan benchmark CLI is not installed")
    return path


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory, simulator_cli):
    """Dataset produced by the benchmark itself, through its CLI."""
    out = tmp_path_factory.mktemp("gen")
    subprocess.run(
        [simulator_cli, "gen", "--count", "3", "--mix", "ca:0.4,free:0.6",
         "--seed", "31", "--out", str(out), "--dataset"],
        check=True, capture_output=True,
    )
    return out / "dataset"


@pytest.fixture(scope="session")
def slice32_dir(tmp_path_factory, toy_dataset_dir):
    return slice_dataset(toy_dataset_dir, tmp_path_factory.mktemp("slice") / "slice32", 32)
