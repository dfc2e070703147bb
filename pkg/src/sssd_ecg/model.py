"""SSSD-ECG noise-prediction network and full-dataset synthesis.

DiffWave-style stack: an input convolution, residual layers each containing
two bidirectional S4 layers with a gated-tanh combination, a diffusion-step
embedding added at the layer input, and a label-conditioning projection added
between the two S4 layers. Skip connections are summed, scaled, and projected
down to the 8 generated leads.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import Dataset, EcgRecord, LabelVocabulary
from .diffusion import NoiseSchedule
from .leads import reconstruct_12_leads
from .s4 import S4Layer


@dataclass
class SssdEcgConfig:
    n_residual_layers: int = 36
    residual_channels: int = 256
    skip_channels: int = 256
    diffusion_embed_dims: tuple[int, int, int] = (128, 512, 512)
    n_labels: int = 71
    out_leads: int = 8
    length: int = 1000
    label_embed_dim: int = 256
    s4_state_dim: int = 64
    s4_bidirectional: bool = True
    lr: float = 2e-4
    batch_size: int = 4

    @classmethod
    def desk(cls, n_labels: int = 4, length: int = 1000) -> "SssdEcgConfig":
        """Reduced profile for CI-scale runs."""
        return cls(n_residual_layers=2, residual_channels=64,
                   skip_channels=64, n_labels=n_labels, length=length,
                   label_embed_dim=64, s4_state_dim=16, lr=2e-3, batch_size=8)


def swish(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


class DiffusionStepEmbedding(nn.Module):
    """Sinusoidal step encoding expanded by two fully connected layers with
    swish activations on the second and third levels."""

    def __init__(self, dims: tuple[int, int, int]):
        super().__init__()
        base, mid, out = dims
        if base % 2:
            raise ValueError("base embedding dimension must be even")
        self.base = base
        self.fc1 = nn.Linear(base, mid)
        self.fc2 = nn.Linear(mid, out)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.base // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
        angles = t.float().unsqueeze(-1) * freqs
        emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
        return swish(self.fc2(swish(self.fc1(emb))))


class ConditionEmbedding(nn.Module):
    """Label vector -> continuous representation, affine in the input so
    convex label combinations map to convex embedding combinations."""

    def __init__(self, n_labels: int, embed_dim: int):
        super().__init__()
        self.label_matrix = nn.Parameter(torch.randn(n_labels, embed_dim) * 0.02)
        self.projection = nn.Linear(embed_dim, embed_dim)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        if c.shape[-1] != self.label_matrix.shape[0]:
            raise ValueError("condition shape invalid")
        return self.projection(c @ self.label_matrix)


class ResidualLayer(nn.Module):
    def __init__(self, cfg: SssdEcgConfig, last: bool = False):
        super().__init__()
        ch = cfg.residual_channels
        self.t_proj = nn.Linear(cfg.diffusion_embed_dims[2], ch)
        self.mid_conv = nn.Conv1d(ch, 2 * ch, kernel_size=3, padding=1)
        self.s4_a = S4Layer(2 * ch, N=cfg.s4_state_dim,
                            bidirectional=cfg.s4_bidirectional)
        self.cond_proj = nn.Linear(cfg.label_embed_dim, 2 * ch)
        self.s4_b = S4Layer(2 * ch, N=cfg.s4_state_dim,
                            bidirectional=cfg.s4_bidirectional)
        # The last layer's residual output is discarded, so it carries no
        # residual projection.
        self.res_conv = None if last else nn.Conv1d(ch, ch, kernel_size=1)
        self.skip_conv = nn.Conv1d(ch, cfg.skip_channels, kernel_size=1)

    def forward(self, x: torch.Tensor, t_embed: torch.Tensor,
                cond_embed: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = x + self.t_proj(t_embed).unsqueeze(-1)
        h = self.mid_conv(h)
        h = self.s4_a(h)
        h = h + self.cond_proj(cond_embed).unsqueeze(-1)
        h = self.s4_b(h)
        gate, filt = h.chunk(2, dim=1)
        h = torch.tanh(filt) * torch.sigmoid(gate)
        if not torch.isfinite(h).all():
            raise RuntimeError("layer diverged")
        skip = self.skip_conv(h)
        if self.res_conv is None:
            return x, skip
        return (x + self.res_conv(h)) / math.sqrt(2.0), skip


class SssdEcg(nn.Module):
    """Conditional epsilon-predictor eps(x_t, t, c) over 8-lead signals."""

    def __init__(self, cfg: SssdEcgConfig):
        super().__init__()
        self.cfg = cfg
        self.in_conv = nn.Conv1d(cfg.out_leads, cfg.residual_channels, 1)
        self.t_embed = DiffusionStepEmbedding(cfg.diffusion_embed_dims)
        self.cond_embed = ConditionEmbedding(cfg.n_labels, cfg.label_embed_dim)
        self.layers = nn.ModuleList(
            [ResidualLayer(cfg, last=(i == cfg.n_residual_layers - 1))
             for i in range(cfg.n_residual_layers)])
        self.out_conv1 = nn.Conv1d(cfg.skip_channels, cfg.skip_channels, 1)
        self.out_conv2 = nn.Conv1d(cfg.skip_channels, cfg.out_leads, 1)
        # Small final init keeps eps-predictions near zero at the start of
        # training while leaving every parameter reachable by gradients.
        nn.init.normal_(self.out_conv2.weight, std=1e-3)
        nn.init.zeros_(self.out_conv2.bias)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor,
                c: torch.Tensor) -> torch.Tensor:
        if x_t.ndim != 3 or x_t.shape[1] != self.cfg.out_leads:
            raise ValueError("input shape invalid")
        h = torch.relu(self.in_conv(x_t))
        t_embed = self.t_embed(t)
        cond_embed = self.cond_embed(c)
        skip_sum = torch.zeros(x_t.shape[0], self.cfg.skip_channels,
                               x_t.shape[2], dtype=x_t.dtype)
        for layer in self.layers:
            h, skip = layer(h, t_embed, cond_embed)
            skip_sum = skip_sum + skip
        out = skip_sum / math.sqrt(len(self.layers))
        out = torch.relu(self.out_conv1(torch.relu(out)))
        out = self.out_conv2(out)
        if not torch.isfinite(out).all():
            raise RuntimeError("diverged: non-finite model output")
        return out


def record_seed(seed: int, index: int) -> int:
    """Stable per-record seed derived from the run seed and record index."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 63)


def generate_dataset_copy(model: nn.Module, labels: list[np.ndarray],
                          sched: NoiseSchedule, seed: int,
                          vocabulary: LabelVocabulary,
                          length: int = 1000, sampling_rate: int = 100,
                          batch_size: int = 32,
                          folds: list[int] | None = None) -> Dataset:
    """Generate one 12-lead record per input label vector.

    Each record uses its own noise stream seeded by (seed, record index), so
    the output is independent of batching. 8-lead samples are lifted to 12
    leads through the limb-lead reconstruction.
    """
    if not labels:
        raise ValueError("labels must be nonempty")
    model.eval()
    n_leads = model.cfg.out_leads if hasattr(model, "cfg") else 8
    records: list[EcgRecord] = []
    for start in range(0, len(labels), batch_size):
        chunk = labels[start:start + batch_size]
        cond = torch.as_tensor(np.stack(chunk), dtype=torch.float32)
        # Per-record noise streams, assembled into a batch.
        gens = [torch.Generator().manual_seed(record_seed(seed, start + j))
                for j in range(len(chunk))]
        x = torch.stack([torch.randn((n_leads, length), generator=g)
                         for g in gens])
        betas = torch.as_tensor(sched.betas, dtype=x.dtype)
        abars = torch.as_tensor(sched.alphas_bar, dtype=x.dtype)
        with torch.no_grad():
            for t in range(sched.T - 1, -1, -1):
                t_vec = torch.full((len(chunk),), t, dtype=torch.long)
                eps_pred = model(x, t_vec, cond)
                x = (x - betas[t] / torch.sqrt(1.0 - abars[t]) * eps_pred) \
                    / torch.sqrt(1.0 - betas[t])
                if t > 0:
                    z = torch.stack([torch.randn((n_leads, length), generator=g)
                                     for g in gens])
                    x = x + torch.sqrt(betas[t]) * z
                if not torch.isfinite(x).all():
                    raise RuntimeError(
                        f"sampler diverged at step {t} (records {start}..{start + len(chunk) - 1})")
        twelve = reconstruct_12_leads(x.numpy().astype(np.float64))
        for j in range(len(chunk)):
            fold = folds[start + j] if folds is not None else ((start + j) % 10) + 1
            records.append(EcgRecord(signal=twelve[j].T.astype(np.float32),
                                     sampling_rate=sampling_rate,
                                     record_id=f"synth{start + j:06d}",
                                     fold=fold))
    return Dataset(records=records, labels=[np.asarray(v, dtype=np.float32) for v in labels],
                   vocabulary=vocabulary)


# ---------------------------------------------------------------------------
# Checkpoint persistence


def save_checkpoint(path: str | Path, model: nn.Module, cfg,
                    sched: NoiseSchedule | None,
                    vocabulary: LabelVocabulary,
                    model_kind: str = "sssd-ecg",
                    extra: dict | None = None) -> None:
    """Write model parameters plus a JSON sidecar describing the run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    sidecar = {
        "model_kind": model_kind,
        "config": asdict(cfg),
        "vocabulary": vocabulary.codes,
    }
    if sched is not None:
        sidecar["schedule"] = {"T": sched.T, "beta_start": sched.beta_start,
                               "beta_end": sched.beta_end}
    if extra:
        sidecar.update(extra)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=1))


def load_checkpoint(path: str | Path):
    """Load a checkpoint; returns (state_dict, sidecar dict)."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    state = torch.load(path, map_location="cpu", weights_only=True)
    return state, sidecar


def checkpoint_hash(model: nn.Module) -> str:
    """Stable hash over all parameter bytes, for identity assertions."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
