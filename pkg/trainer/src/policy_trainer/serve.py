"""Candidate-stream responder.

Speaks the planner's line-delimited protocol over a unix socket:

    request : {"v":1, "id", "q":[14], "g":[14], "N", "T", "obs"}
    response: N lines {"id", "index", "traj":[T][14]} then {"id", "done": true}

For each request, N latent samples are drawn from the standard normal
prior and decoded into chunks conditioned on (q, g, depth frames); each
trajectory is the request's q followed by the first T-1 chunk steps, so
every candidate starts exactly at the current configuration. Malformed
requests get one {"error": ...} line and the connection stays open.
"""

from __future__ import annotations

import json
import os
import socket
import zlib

import numpy as np
import torch

from .model import ChunkPolicy


def _depths_from_obs(obs, cfg) -> np.ndarray:
    out = np.zeros((cfg.depth_frames, cfg.zones, cfg.zones), dtype=np.float32)
    if not obs:
        return out
    frames = sorted(obs.get("frames", []), key=lambda f: int(f.get("mount", 0)))
    for slot, frame in enumerate(frames[: cfg.depth_frames]):
        zones = np.asarray(frame["zones"], dtype=np.float32)
        if zones.shape != (cfg.zones, cfg.zones):
            raise ValueError(f"frame {slot} zones have shape {zones.shape}")
        out[slot] = zones
    return out


@torch.no_grad()
def answer_request(model: ChunkPolicy, request: dict, seed: int) -> list:
    cfg = model.cfg
    # keep q at full precision: candidates must start at exactly the
    # requested configuration (the planner verifies this)
    q = np.asarray(request["q"], dtype=np.float64)
    g = np.asarray(request["g"], dtype=np.float64)
    n = int(request["N"])
    horizon = int(request["T"])
    if q.shape != (cfg.joint_dim,) or g.shape != (cfg.joint_dim,):
        raise ValueError("q/g must be 14-vectors")
    if n < 1:
        raise ValueError("N must be >= 1")
    if not 2 <= horizon <= cfg.chunk_len + 1:
        raise ValueError(f"T={horizon} outside [2, {cfg.chunk_len + 1}]")
    depths = _depths_from_obs(request.get("obs"), cfg)

    # prior samples seeded per (server seed, request id): identical
    # requests get byte-identical responses, distinct ids vary z
    generator = torch.Generator()
    generator.manual_seed((int(seed) << 32) ^ zlib.crc32(str(request.get("id")).encode()))
    z = torch.randn((n, cfg.z_dim), generator=generator)
    qt = torch.from_numpy(q.astype(np.float32))[None, :].expand(n, -1)
    gt = torch.from_numpy(g.astype(np.float32))[None, :].expand(n, -1)
    dt = torch.from_numpy(depths)[None].expand(n, -1, -1, -1)
    chunks = model.decode(z, qt, gt, dt).numpy().astype(np.float64)

    request_id = request.get("id")
    lines = []
    for i in range(n):
        traj = np.concatenate([q[None, :], chunks[i, : horizon - 1]])
        lines.append({"id": request_id, "index": i, "traj": [[float(v) for v in row] for row in traj]})
    lines.append({"id": request_id, "done": True})
    return lines


def serve(model: ChunkPolicy, socket_path, seed: int = 0, max_requests: int = None, ready_event=None):
    """Accept one client at a time and answer until the stream closes."""
    if os.path.exists(socket_path):
        os.unlink(socket_path)
    server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    server.bind(socket_path)
    server.listen(1)
    if ready_event is not None:
        ready_event.set()
    served = 0
    try:
        while max_requests is None or served < max_requests:
            conn, _ = server.accept()
            buf = b""
            with conn:
                while max_requests is None or served < max_requests:
                    chunk = conn.recv(1 << 16)
                    if not chunk:
                        break
                    buf += chunk
                    while b"\n" in buf:
                        line, buf = buf.split(b"\n", 1)
                        if not line.strip():
                            continue
                        try:
                            request = json.loads(line)
                            replies = answer_request(model, request, seed)
                        except (ValueError, KeyError, TypeError) as exc:
                            error = {"error": f"bad request: {exc}"}
                            conn.sendall((json.dumps(error) + "\n").encode())
                            continue
                        payload = "".join(json.dumps(r) + "\n" for r in replies)
                        conn.sendall(payload.encode())
                        served += 1
    finally:
        server.close()
        if os.path.exists(socket_path):
            os.unlink(socket_path)
