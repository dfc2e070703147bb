"""Training loops for the diffusion model and the GAN baselines."""

from __future__ import annotations

import numpy as np
import torch

from .data import Dataset
from .diffusion import NoiseSchedule, denoising_loss
from .gan import (Pulse2PulseConfig, Pulse2PulseGenerator, Discriminator,
                  WaveGanConfig, WaveGanGenerator, adversarial_train_step)
from .leads import project_to_8_leads
from .model import SssdEcg, SssdEcgConfig


def eight_lead_tensor(dataset: Dataset) -> torch.Tensor:
    """Training signals as [n x 8 x L] (generation space)."""
    signals = dataset.signal_array()  # [n, L, 12]
    eight = project_to_8_leads(np.transpose(signals, (0, 2, 1)))
    return torch.from_numpy(np.ascontiguousarray(eight, dtype=np.float32))


def train_sssd(model: SssdEcg, dataset: Dataset, sched: NoiseSchedule,
               steps: int, seed: int = 0,
               lr: float | None = None,
               batch_size: int | None = None,
               log_every: int = 50) -> list[float]:
    """Optimize the epsilon-prediction objective; returns the loss curve."""
    if len(dataset) == 0:
        raise ValueError("no training data")
    lr = lr if lr is not None else model.cfg.lr
    batch_size = batch_size if batch_size is not None else model.cfg.batch_size
    x_all = eight_lead_tensor(dataset)
    c_all = torch.from_numpy(dataset.label_array())
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    model.train()
    curve = []
    for step in range(steps):
        idx = torch.randint(0, len(dataset), (batch_size,), generator=gen)
        loss = denoising_loss(model, x_all[idx], c_all[idx], sched, gen)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            curve.append(float(loss.detach()))
    return curve


def gan_generate_copy(gen: torch.nn.Module, labels, seed: int, vocabulary,
                      sampling_rate: int = 100, batch_size: int = 64,
                      folds: list[int] | None = None) -> Dataset:
    """Sample one 12-lead record per label vector from a GAN generator,
    with per-record latent seeds (same limb-lead policy as the diffusion
    model: generate 8 leads, reconstruct 12)."""
    from .data import EcgRecord
    from .gan import _draw_latent
    from .leads import reconstruct_12_leads
    from .model import record_seed

    if not len(labels):
        raise ValueError("labels must be nonempty")
    gen.eval()
    records = []
    with torch.no_grad():
        for start in range(0, len(labels), batch_size):
            chunk = labels[start:start + batch_size]
            cond = torch.as_tensor(np.stack(chunk), dtype=torch.float32)
            z = torch.cat([
                _draw_latent(gen, 1,
                             torch.Generator().manual_seed(record_seed(seed, start + j)))
                for j in range(len(chunk))])
            out = gen(z, cond)
            twelve = reconstruct_12_leads(out.numpy().astype(np.float64))
            for j in range(len(chunk)):
                fold = folds[start + j] if folds is not None else ((start + j) % 10) + 1
                records.append(EcgRecord(
                    signal=twelve[j].T.astype(np.float32),
                    sampling_rate=sampling_rate,
                    record_id=f"synth{start + j:06d}", fold=fold))
    return Dataset(records=records,
                   labels=[np.asarray(v, dtype=np.float32) for v in labels],
                   vocabulary=vocabulary)


def build_gan(kind: str, cfg) -> tuple[torch.nn.Module, Discriminator]:
    if kind == "wavegan":
        gen = WaveGanGenerator(cfg)
    elif kind == "pulse2pulse":
        gen = Pulse2PulseGenerator(cfg)
    else:
        raise ValueError(f"unknown model kind: {kind}")
    disc = Discriminator(model_size=cfg.model_size,
                         n_blocks=cfg.discriminator_blocks,
                         in_leads=cfg.out_leads, length=cfg.length)
    return gen, disc


def train_gan(gen: torch.nn.Module, disc: Discriminator, dataset: Dataset,
              steps: int, seed: int = 0, lr: float | None = None,
              batch_size: int | None = None,
              log_every: int = 10) -> dict[str, list[float]]:
    """Least-squares adversarial training; returns g/d loss curves."""
    if len(dataset) == 0:
        raise ValueError("no training data")
    cfg = gen.cfg
    lr = lr if lr is not None else cfg.lr
    batch_size = batch_size if batch_size is not None else cfg.batch_size
    x_all = eight_lead_tensor(dataset)
    c_all = torch.from_numpy(dataset.label_array())
    g_opt = torch.optim.Adam(gen.parameters(), lr=lr)
    d_opt = torch.optim.Adam(disc.parameters(), lr=lr)
    rng = torch.Generator().manual_seed(seed)
    curves: dict[str, list[float]] = {"g_loss": [], "d_loss": []}
    for step in range(steps):
        idx = torch.randint(0, len(dataset), (batch_size,), generator=rng)
        g_loss, d_loss = adversarial_train_step(
            gen, disc, g_opt, d_opt, x_all[idx], c_all[idx], rng)
        curves["g_loss"].append(g_loss)
        curves["d_loss"].append(d_loss)
    return curves
