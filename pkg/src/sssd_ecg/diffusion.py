"""DDPM forward process, epsilon-prediction objective, and ancestral sampler.

The forward kernel is the standard Gaussian chain
    q(x_t | x_0) = N(sqrt(abar_t) x_0, (1 - abar_t) I),
with abar_t the cumulative product of (1 - beta_i) over a linear beta
schedule. The sampler uses the posterior-mean step with variance beta_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with precomputed cumulative signal retention."""
    T: int
    betas: np.ndarray       # [T], float64
    alphas_bar: np.ndarray  # [T], float64

    @property
    def beta_start(self) -> float:
        return float(self.betas[0])

    @property
    def beta_end(self) -> float:
        return float(self.betas[-1])


def build_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1 or not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("schedule invalid: need T >= 1 and "
                         "0 < beta_start <= beta_end < 1")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alphas_bar=alphas_bar)


def forward_sample(x0: torch.Tensor, t: int, eps: torch.Tensor,
                   sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form draw of x_t given x_0 and the noise realization eps."""
    if eps.shape != x0.shape:
        raise ValueError("noise shape invalid")
    if not (0 <= t < sched.T):
        raise ValueError(f"schedule invalid: step {t} outside [0, {sched.T})")
    abar = sched.alphas_bar[t]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def denoising_loss(model, x0_batch: torch.Tensor, cond_batch: torch.Tensor,
                   sched: NoiseSchedule,
                   generator: torch.Generator) -> torch.Tensor:
    """Mean squared epsilon-residual over a batch with uniform step draws."""
    batch = x0_batch.shape[0]
    t = torch.randint(0, sched.T, (batch,), generator=generator)
    eps = torch.randn(x0_batch.shape, generator=generator,
                      dtype=x0_batch.dtype)
    abar = torch.as_tensor(sched.alphas_bar, dtype=x0_batch.dtype)[t]
    shape = (batch,) + (1,) * (x0_batch.ndim - 1)
    x_t = (abar.sqrt().view(shape) * x0_batch
           + (1.0 - abar).sqrt().view(shape) * eps)
    pred = model(x_t, t, cond_batch)
    if not torch.isfinite(pred).all():
        raise RuntimeError("diverged: non-finite model output")
    return ((eps - pred) ** 2).mean()


def ancestral_sample(model, cond: torch.Tensor, sched: NoiseSchedule,
                     shape: tuple[int, ...], seed: int) -> torch.Tensor:
    """Run the reverse chain from x_T ~ N(0, I) down to x_0.

    Deterministic given (seed, model parameters, cond). The per-step noise
    z is zero at t = 0 and the step variance is beta_t.
    """
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn(shape, generator=generator)
    betas = torch.as_tensor(sched.betas, dtype=x.dtype)
    abars = torch.as_tensor(sched.alphas_bar, dtype=x.dtype)
    with torch.no_grad():
        for t in range(sched.T - 1, -1, -1):
            t_vec = torch.full((shape[0],), t, dtype=torch.long)
            eps_pred = model(x, t_vec, cond)
            x = (x - betas[t] / torch.sqrt(1.0 - abars[t]) * eps_pred) \
                / torch.sqrt(1.0 - betas[t])
            if t > 0:
                z = torch.randn(shape, generator=generator)
                x = x + torch.sqrt(betas[t]) * z
            if not torch.isfinite(x).all():
                raise RuntimeError(f"sampler diverged at step {t}")
    return x
