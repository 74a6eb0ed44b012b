"""Action-chunking CVAE.

A behavior encoder compresses (current joints, action chunk) into the
posterior of a latent style variable z; the decoder attends over one z
token, one state token (current + goal joints), and forty per-sensor
depth tokens, then reads the action chunk off learned query slots.
Depth frames stay in their own sensor frames; a small shared conv stack
embeds each 8x8 frame.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import PolicyConfig


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over z, averaged over batch."""
    return 0.5 * torch.sum(mu * mu + torch.exp(logvar) - 1.0 - logvar, dim=-1).mean()


class DepthEmbed(nn.Module):
    """Shared per-frame embedding: conv/flatten to depth_embed_dim."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(1, 8, kernel_size=3, stride=2, padding=1),  # 8x8 -> 4x4
            nn.ReLU(),
            nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),  # 4x4 -> 2x2
            nn.ReLU(),
        )
        self.proj = nn.Linear(16 * 4, cfg.depth_embed_dim)

    def forward(self, depths: torch.Tensor) -> torch.Tensor:
        # depths: (B, F, H, W) -> (B, F, depth_embed_dim)
        b, f, h, w = depths.shape
        x = self.conv(depths.reshape(b * f, 1, h, w))
        x = self.proj(x.reshape(b * f, -1))
        return x.reshape(b, f, -1)


def _blocks(cfg: PolicyConfig, n: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.width,
        nhead=cfg.heads,
        dim_feedforward=cfg.ffn_dim,
        dropout=0.0,
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, n, enable_nested_tensor=False)


class BehaviorEncoder(nn.Module):
    """(q, chunk) -> z posterior parameters."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.q_in = nn.Linear(cfg.joint_dim, cfg.width)
        self.step_in = nn.Linear(cfg.joint_dim, cfg.width)
        self.step_pos = nn.Parameter(torch.zeros(cfg.chunk_len, cfg.width))
        self.blocks = _blocks(cfg, cfg.encoder_blocks)
        self.mu_head = nn.Linear(cfg.width, cfg.z_dim)
        self.logvar_head = nn.Linear(cfg.width, cfg.z_dim)

    def forward(self, q: torch.Tensor, chunk: torch.Tensor):
        if q.shape[-1] != self.cfg.joint_dim or chunk.shape[-2:] != (self.cfg.chunk_len, self.cfg.joint_dim):
            raise ValueError(f"encoder input shapes {tuple(q.shape)}, {tuple(chunk.shape)} do not match the config")
        tokens = torch.cat([self.q_in(q)[:, None, :], self.step_in(chunk) + self.step_pos], dim=1)
        out = self.blocks(tokens)[:, 0]
        return self.mu_head(out), self.logvar_head(out)


class ChunkDecoder(nn.Module):
    """(z, q, g, depth frames) -> action chunk (B, k, 14)."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.depth_embed = DepthEmbed(cfg)
        self.depth_in = nn.Linear(cfg.depth_embed_dim, cfg.width)
        self.sensor_pos = nn.Parameter(torch.zeros(cfg.depth_frames, cfg.width))
        self.state_in = nn.Linear(cfg.state_dim, cfg.width)
        self.z_in = nn.Linear(cfg.z_dim, cfg.width)
        self.queries = nn.Parameter(torch.zeros(cfg.chunk_len, cfg.width))
        self.blocks = _blocks(cfg, cfg.decoder_blocks)
        self.head = nn.Linear(cfg.width, cfg.joint_dim)
        nn.init.normal_(self.queries, std=0.02)
        nn.init.normal_(self.sensor_pos, std=0.02)

    def forward(self, z: torch.Tensor, q: torch.Tensor, g: torch.Tensor, depths: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if depths.shape[-3:] != (cfg.depth_frames, cfg.zones, cfg.zones):
            raise ValueError(f"depth input shape {tuple(depths.shape)} does not match the config")
        if z.shape[-1] != cfg.z_dim or q.shape[-1] != cfg.joint_dim or g.shape[-1] != cfg.joint_dim:
            raise ValueError("z/q/g shapes do not match the config")
        state = torch.cat([q, g], dim=-1)
        tokens = torch.cat(
            [
                self.z_in(z)[:, None, :],
                self.state_in(state)[:, None, :],
                self.depth_in(self.depth_embed(depths)) + self.sensor_pos,
                self.queries.expand(z.shape[0], -1, -1),
            ],
            dim=1,
        )
        out = self.blocks(tokens)
        return self.head(out[:, -cfg.chunk_len :])


class ChunkPolicy(nn.Module):
    """Full CVAE; `sample` draws the reparameterized z during training."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = BehaviorEncoder(cfg)
        self.decoder = ChunkDecoder(cfg)

    def encode_behavior(self, q, chunk):
        return self.encoder(q, chunk)

    def decode(self, z, q, g, depths):
        return self.decoder(z, q, g, depths)

    def forward(self, q, g, depths, chunk, generator=None):
        mu, logvar = self.encoder(q, chunk)
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        z = mu + torch.exp(0.5 * logvar) * noise
        return self.decoder(z, q, g, depths), mu, logvar
