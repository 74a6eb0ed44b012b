"""Trainer configuration with desk-scale defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import yaml


@dataclass(frozen=True)
class PolicyConfig:
    chunk_len: int = 15
    state_dim: int = 28  # current q (14) concatenated with goal g (14)
    joint_dim: int = 14
    z_dim: int = 32
    depth_frames: int = 40
    zones: int = 8
    depth_embed_dim: int = 16
    width: int = 128
    heads: int = 4
    ffn_dim: int = 256
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    kl_weight: float = 1e-4
    learning_rate: float = 2e-3
    batch_size: int = 32
    threads: int = 1

    def __post_init__(self):
        if min(self.chunk_len, self.z_dim, self.width, self.depth_embed_dim) <= 0:
            raise ValueError("dimensions must be positive")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")


def load_config(path=None) -> PolicyConfig:
    if path is None:
        return PolicyConfig()
    with open(path, "r", encoding="utf-8") as fh:
        node = yaml.safe_load(fh) or {}
    known = set(PolicyConfig.__dataclass_fields__)
    unknown = set(node) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PolicyConfig(**node)


def config_to_dict(config: PolicyConfig) -> dict:
    return asdict(config)
