import numpy as np
import pytest
import torch

from policy_trainer.config import PolicyConfig
from policy_trainer.model import ChunkPolicy, kl_divergence


@pytest.fixture(scope="module")
def policy():
    torch.manual_seed(0)
    return ChunkPolicy(PolicyConfig())


def batch(cfg, b=4, seed=1):
    gen = torch.Generator().manual_seed(seed)
    q = torch.randn(b, cfg.joint_dim, generator=gen)
    g = torch.randn(b, cfg.joint_dim, generator=gen)
    depths = torch.rand(b, cfg.depth_frames, cfg.zones, cfg.zones, generator=gen) * 4.0
    chunk = torch.randn(b, cfg.chunk_len, cfg.joint_dim, generator=gen)
    return q, g, depths, chunk


def test_encoder_output_shapes(policy):
    cfg = policy.cfg
    q, _, _, chunk = batch(cfg, b=6)
    mu, logvar = policy.encode_behavior(q, chunk)
    assert mu.shape == (6, cfg.z_dim)
    assert logvar.shape == (6, cfg.z_dim)


def test_identical_inputs_identical_posteriors(policy):
    cfg = policy.cfg
    q, _, _, chunk = batch(cfg, b=1)
    q = q.repeat(5, 1)
    chunk = chunk.repeat(5, 1, 1)
    mu, logvar = policy.encode_behavior(q, chunk)
    assert torch.all(mu == mu[0])
    assert torch.all(logvar == logvar[0])


def test_decoder_output_shape_and_determinism(policy):
    cfg = policy.cfg
    q, g, depths, _ = batch(cfg, b=3)
    z = torch.randn(3, cfg.z_dim, generator=torch.Generator().manual_seed(2))
    out1 = policy.decode(z, q, g, depths)
    out2 = policy.decode(z, q, g, depths)
    assert out1.shape == (3, cfg.chunk_len, cfg.joint_dim)
    assert torch.all(out1 == out2)


def test_shape_mismatch_rejected(policy):
    cfg = policy.cfg
    q, g, depths, chunk = batch(cfg)
    with pytest.raises(ValueError):
        policy.encode_behavior(q[:, :10], chunk)
    with pytest.raises(ValueError):
        policy.decode(torch.randn(4, cfg.z_dim + 1), q, g, depths)
    with pytest.raises(ValueError):
        policy.decode(torch.randn(4, cfg.z_dim), q, g, depths[:, :10])


def test_kl_matches_closed_form_oracle():
    gen = torch.Generator().manual_seed(3)
    mu = torch.randn(16, 32, generator=gen).double()
    logvar = torch.randn(16, 32, generator=gen).double()
    got = kl_divergence(mu, logvar).item()
    m = mu.numpy()
    lv = logvar.numpy()
    expected = np.mean(0.5 * np.sum(m ** 2 + np.exp(lv) - 1.0 - lv, axis=1))
    assert abs(got - expected) < 1e-6

    # KL >= 0 always, zero exactly at the prior
    assert kl_divergence(torch.zeros(4, 32), torch.zeros(4, 32)).item() == 0.0
    for seed in range(5):
        g2 = torch.Generator().manual_seed(seed)
        assert kl_divergence(torch.randn(8, 32, generator=g2), torch.randn(8, 32, generator=g2)).item() >= 0.0


def test_gradient_probe_matches_finite_difference():
    cfg = PolicyConfig(width=32, heads=2, ffn_dim=64, encoder_blocks=1, decoder_blocks=1, z_dim=8, depth_embed_dim=8)
    torch.manual_seed(4)
    model = ChunkPolicy(cfg).double()
    q, g, depths, chunk = batch(cfg, b=2, seed=5)
    q, g, depths, chunk = q.double(), g.double(), depths.double(), chunk.double()
    z = torch.randn(2, cfg.z_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(6))

    def loss_value():
        pred = model.decode(z, q, g, depths)
        return torch.mean(torch.abs(pred - chunk))

    loss = loss_value()
    model.zero_grad()
    loss.backward()
    probe = model.decoder.head.weight
    analytic = probe.grad[0, 0].item()

    h = 1e-6
    with torch.no_grad():
        probe[0, 0] += h
        up = loss_value().item()
        probe[0, 0] -= 2 * h
        down = loss_value().item()
        probe[0, 0] += h
    fd = (up - down) / (2 * h)
    assert abs(analytic - fd) / max(abs(fd), 1e-12) < 1e-4
