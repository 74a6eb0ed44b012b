"""Training loop: L1 chunk reconstruction plus beta-weighted KL."""

from __future__ import annotations

import numpy as np
import torch

from .config import PolicyConfig, config_to_dict
from .data import ChunkDataset
from .model import ChunkPolicy, kl_divergence


class TrainingError(RuntimeError):
    pass


def _setup(cfg: PolicyConfig, seed: int) -> torch.Generator:
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed + 1)
    return gen


def train(
    data_dir,
    cfg: PolicyConfig,
    seed: int,
    steps: int,
    out_path=None,
    stop_l1: float = None,
    log_every: int = 0,
):
    """Train on a dataset directory; returns (model, history dict).

    Deterministic for a given seed and thread count. Aborts on a
    non-finite loss. ``stop_l1`` ends the run early once the
    posterior-mean reconstruction reaches that L1 (radians).
    """
    import os

    gen = _setup(cfg, seed)
    dataset = ChunkDataset(
        os.path.join(data_dir, "records.jsonl"),
        os.path.join(data_dir, "frames.bin"),
        cfg.depth_frames,
    )
    model = ChunkPolicy(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    schedule = torch.optim.lr_scheduler.StepLR(optimizer, step_size=400, gamma=0.5)

    history = {"loss": [], "recon_l1": [], "kl": []}
    n = len(dataset)
    for step in range(steps):
        idx = torch.randint(0, n, (min(cfg.batch_size, n),), generator=gen).tolist()
        qs, gs, depths, chunks = dataset.tensors(idx)
        q = torch.from_numpy(qs)
        g = torch.from_numpy(gs)
        d = torch.from_numpy(depths)
        target = torch.from_numpy(chunks)

        pred, mu, logvar = model(q, g, d, target, generator=gen)
        recon = torch.mean(torch.abs(pred - target))
        kl = kl_divergence(mu, logvar)
        loss = recon if cfg.kl_weight == 0.0 else recon + cfg.kl_weight * kl
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}: recon={recon.item()} kl={kl.item()}")

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 0.5)
        optimizer.step()
        schedule.step()

        history["loss"].append(float(loss.item()))
        history["recon_l1"].append(float(recon.item()))
        history["kl"].append(float(kl.item()))
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {loss.item():.5f} recon {recon.item():.5f} kl {kl.item():.3f}")

        if stop_l1 is not None and step % 25 == 0:
            if evaluate_l1(model, dataset) < stop_l1:
                break

    if out_path is not None:
        save_checkpoint(model, cfg, history, out_path)
    return model, history


@torch.no_grad()
def evaluate_l1(model: ChunkPolicy, dataset: ChunkDataset, limit: int = 256) -> float:
    """Posterior-mean reconstruction L1 over (up to) the whole dataset."""
    idx = list(range(min(len(dataset), limit)))
    qs, gs, depths, chunks = dataset.tensors(idx)
    q = torch.from_numpy(qs)
    g = torch.from_numpy(gs)
    d = torch.from_numpy(depths)
    target = torch.from_numpy(chunks)
    mu, _ = model.encode_behavior(q, target)
    pred = model.decode(mu, q, g, d)
    return float(torch.mean(torch.abs(pred - target)).item())


def save_checkpoint(model: ChunkPolicy, cfg: PolicyConfig, history: dict, path):
    torch.save(
        {
            "config": config_to_dict(cfg),
            "state_dict": model.state_dict(),
            "history": {k: np.asarray(v).tolist() for k, v in history.items()},
        },
        path,
    )


def load_checkpoint(path) -> tuple:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = PolicyConfig(**blob["config"])
    model = ChunkPolicy(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, cfg, blob.get("history", {})
