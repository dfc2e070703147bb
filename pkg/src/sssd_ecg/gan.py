"""Conditional WaveGAN* and Pulse2Pulse baselines with least-squares
adversarial training.

Both generators produce 8-lead, 1000-step signals; class information enters
through conditional batch normalization at every generator convolution. The
label vector is mapped through a learned embedding whose output dimension is
twice the channel count, split into a scale delta and a shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class WaveGanConfig:
    model_size: int = 50
    generator_blocks: int = 5
    latent_dim: int = 1000
    discriminator_blocks: int = 6
    n_labels: int = 71
    out_leads: int = 8
    length: int = 1000
    lr: float = 1e-4
    epochs: int = 3000
    batch_size: int = 32

    @classmethod
    def desk(cls, n_labels: int = 4) -> "WaveGanConfig":
        return cls(model_size=8, n_labels=n_labels, batch_size=8)


@dataclass
class Pulse2PulseConfig:
    model_size: int = 50
    down_blocks: int = 5
    up_blocks: int = 5
    discriminator_blocks: int = 6
    n_labels: int = 71
    out_leads: int = 8
    length: int = 1000
    lr: float = 1e-4
    epochs: int = 3000
    batch_size: int = 32

    @classmethod
    def desk(cls, n_labels: int = 4) -> "Pulse2PulseConfig":
        return cls(model_size=8, n_labels=n_labels, batch_size=8)


class ConditionalBatchNorm1d(nn.Module):
    """Batch normalization whose scale/shift are label-dependent.

    y = (1 + dgamma(c)) * normalize(x) + dbeta(c); an all-zero embedding
    reduces the layer to plain batch normalization.
    """

    def __init__(self, channels: int, n_labels: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(channels, affine=False)
        self.embed = nn.Linear(n_labels, 2 * channels)
        nn.init.normal_(self.embed.weight, std=0.02)
        nn.init.zeros_(self.embed.bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        dgamma, dbeta = self.embed(c).chunk(2, dim=-1)
        h = self.bn(x)
        return (1.0 + dgamma.unsqueeze(-1)) * h + dbeta.unsqueeze(-1)


class _UpBlock(nn.Module):
    """WaveGAN*-style upsampling block: nearest-neighbor upsample, pad,
    1-D convolution with conditional batch norm, ReLU."""

    def __init__(self, in_ch: int, out_ch: int, n_labels: int, factor: int = 4):
        super().__init__()
        self.factor = factor
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size=5, padding=2)
        self.cbn = ConditionalBatchNorm1d(out_ch, n_labels)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = torch.repeat_interleave(x, self.factor, dim=-1)
        return torch.relu(self.cbn(self.conv(x), c))


class WaveGanGenerator(nn.Module):
    """Dense projection of a uniform latent followed by five x4 upsampling
    blocks; the final length 1024 is trimmed to 1000."""

    def __init__(self, cfg: WaveGanConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_size
        widths = [16 * d, 8 * d, 4 * d, 2 * d, d]
        self.fc = nn.Linear(cfg.latent_dim, widths[0])
        blocks = []
        for i in range(cfg.generator_blocks):
            out_ch = widths[i + 1] if i + 1 < len(widths) else d
            blocks.append(_UpBlock(widths[min(i, len(widths) - 1)], out_ch,
                                   cfg.n_labels))
        self.blocks = nn.ModuleList(blocks)
        self.out_conv = nn.Conv1d(d, cfg.out_leads, kernel_size=1)

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.cfg.latent_dim:
            raise ValueError("generator shape invalid: bad latent dimension")
        x = self.fc(z).unsqueeze(-1)  # [B, 16d, 1]
        for block in self.blocks:
            x = block(x, c)
        x = self.out_conv(x)
        if x.shape[-1] < self.cfg.length:
            raise RuntimeError("generator shape invalid: output too short")
        return x[..., :self.cfg.length]


class Pulse2PulseGenerator(nn.Module):
    """U-Net over raw noise: five stride-2 down blocks, five x2 up blocks
    consuming mirrored skip connections."""

    def __init__(self, cfg: Pulse2PulseConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_size
        widths = [d, 2 * d, 4 * d, 8 * d, 16 * d]
        downs, down_cbns = [], []
        in_ch = cfg.out_leads
        for w in widths:
            downs.append(nn.Conv1d(in_ch, w, kernel_size=5, stride=2, padding=2))
            down_cbns.append(ConditionalBatchNorm1d(w, cfg.n_labels))
            in_ch = w
        self.downs = nn.ModuleList(downs)
        self.down_cbns = nn.ModuleList(down_cbns)
        ups, up_cbns = [], []
        for i in reversed(range(len(widths))):
            skip_ch = widths[i - 1] if i > 0 else cfg.out_leads
            ups.append(nn.Conv1d(widths[i] + skip_ch,
                                 widths[i - 1] if i > 0 else d,
                                 kernel_size=5, padding=2))
            up_cbns.append(ConditionalBatchNorm1d(
                widths[i - 1] if i > 0 else d, cfg.n_labels))
        self.ups = nn.ModuleList(ups)
        self.up_cbns = nn.ModuleList(up_cbns)
        self.out_conv = nn.Conv1d(d, cfg.out_leads, kernel_size=1)

    def forward(self, noise: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if noise.shape[1] != self.cfg.out_leads or noise.shape[2] != self.cfg.length:
            raise ValueError("generator shape invalid: bad noise shape")
        skips = [noise]
        x = noise
        for conv, cbn in zip(self.downs, self.down_cbns):
            x = torch.nn.functional.leaky_relu(cbn(conv(x), c), 0.2)
            skips.append(x)
        skips.pop()  # deepest activation is x itself
        for conv, cbn in zip(self.ups, self.up_cbns):
            skip = skips.pop()
            x = torch.repeat_interleave(x, 2, dim=-1)
            if x.shape[-1] != skip.shape[-1]:  # odd lengths from stride 2
                x = torch.nn.functional.pad(x, (0, skip.shape[-1] - x.shape[-1]))
            x = torch.relu(cbn(conv(torch.cat([x, skip], dim=1)), c))
        return self.out_conv(x)


class Discriminator(nn.Module):
    """Unconditional 1-D convolutional critic with a linear output head."""

    def __init__(self, model_size: int = 50, n_blocks: int = 6,
                 in_leads: int = 8, length: int = 1000):
        super().__init__()
        d = model_size
        widths = [d * (2 ** min(i, 4)) for i in range(n_blocks)]
        convs = []
        in_ch = in_leads
        for w in widths:
            convs.append(nn.Conv1d(in_ch, w, kernel_size=5, stride=4, padding=2))
            in_ch = w
        self.convs = nn.ModuleList(convs)
        with torch.no_grad():
            probe = torch.zeros(1, in_leads, length)
            for conv in self.convs:
                probe = conv(probe)
            flat = probe.numel()
        self.head = nn.Linear(flat, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = torch.nn.functional.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).squeeze(-1)


def adversarial_train_step(gen: nn.Module, disc: nn.Module,
                           g_opt: torch.optim.Optimizer,
                           d_opt: torch.optim.Optimizer,
                           real_batch: torch.Tensor,
                           cond_batch: torch.Tensor,
                           generator: torch.Generator) -> tuple[float, float]:
    """One least-squares GAN step: discriminator targets 1 on real and 0 on
    fake, generator targets 1. Returns (g_loss, d_loss)."""
    if real_batch.shape[0] == 0:
        raise ValueError("empty batch")
    batch = real_batch.shape[0]
    noise = _draw_latent(gen, batch, generator)

    fake = gen(noise, cond_batch)
    d_real = disc(real_batch)
    d_fake = disc(fake.detach())
    d_loss = 0.5 * (((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean())
    d_opt.zero_grad()
    d_loss.backward()
    d_opt.step()

    g_loss = ((disc(fake) - 1.0) ** 2).mean()
    g_opt.zero_grad()
    g_loss.backward()
    g_opt.step()

    if not (torch.isfinite(g_loss) and torch.isfinite(d_loss)):
        raise RuntimeError("GAN diverged")
    return float(g_loss.detach()), float(d_loss.detach())


def _draw_latent(gen: nn.Module, batch: int,
                 generator: torch.Generator) -> torch.Tensor:
    """Uniform latent input matching the generator kind."""
    if isinstance(gen, WaveGanGenerator):
        shape = (batch, gen.cfg.latent_dim)
    elif isinstance(gen, Pulse2PulseGenerator):
        shape = (batch, gen.cfg.out_leads, gen.cfg.length)
    else:
        raise TypeError(f"unknown generator type: {type(gen).__name__}")
    return torch.rand(shape, generator=generator) * 2.0 - 1.0
