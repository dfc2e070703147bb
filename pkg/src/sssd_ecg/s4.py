"""Structured state-space layer: HiPPO init, bilinear discretization,
convolution-kernel materialization, and a bidirectional layer.

A linear state-space system
    x'(t) = A x(t) + B u(t),   y(t) = C x(t) + D u(t)
is discretized with the bilinear transform and unrolled into a length-L
convolution kernel K[k] = C Abar^k Bbar, applied with FFT convolution. The
transition matrix is the HiPPO-LegS matrix, which is what gives the layer
long-range memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

DT_MIN = 1e-3
DT_MAX = 1e-1
NORM_EPS = 1e-5


@dataclass
class SsmParams:
    """Single-channel continuous-time SSM parameters."""
    A: torch.Tensor       # [N, N]
    B: torch.Tensor       # [N]
    C: torch.Tensor       # [N]
    D: torch.Tensor       # scalar
    log_dt: torch.Tensor  # scalar

    @property
    def N(self) -> int:
        return self.A.shape[0]


@dataclass
class S4LayerParams:
    """Per-channel forward/backward SSM banks plus optional normalization."""
    forward_ssm: list[SsmParams]
    backward_ssm: list[SsmParams]
    norm: tuple[torch.Tensor, torch.Tensor] | None  # (gamma [H], beta [H])

    @property
    def n_channels(self) -> int:
        return len(self.forward_ssm)


def hippo_matrix(N: int, dtype=torch.float64) -> tuple[torch.Tensor, torch.Tensor]:
    """HiPPO-LegS transition matrix A [N x N] and input map B [N]."""
    if N < 1:
        raise ValueError("state size invalid: N must be >= 1")
    n = torch.arange(N, dtype=dtype)
    scale = torch.sqrt(2 * n + 1)
    A = -scale[:, None] * scale[None, :]
    A = torch.tril(A, diagonal=-1) + torch.diag(-(n + 1))
    return A, scale.clone()


def hippo_init(N: int, generator: torch.Generator | None = None,
               dtype=torch.float64) -> SsmParams:
    """HiPPO-LegS initialization with random output map and step size."""
    A, B = hippo_matrix(N, dtype=dtype)
    C = torch.randn(N, generator=generator, dtype=dtype) / math.sqrt(N)
    log_dt = (math.log(DT_MIN)
              + torch.rand((), generator=generator, dtype=dtype)
              * (math.log(DT_MAX) - math.log(DT_MIN)))
    return SsmParams(A=A, B=B, C=C, D=torch.ones((), dtype=dtype),
                     log_dt=log_dt)


def bilinear_discretize(A: torch.Tensor, B: torch.Tensor,
                        dt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinear transform; broadcasts over leading batch dims of dt.

    A: [N,N], B: [N], dt: [...] -> Abar [..., N, N], Bbar [..., N].
    """
    N = A.shape[0]
    eye = torch.eye(N, dtype=A.dtype, device=A.device)
    dt_ = dt.reshape(dt.shape + (1, 1))
    lhs = eye - dt_ / 2 * A
    rhs = eye + dt_ / 2 * A
    try:
        Abar = torch.linalg.solve(lhs, rhs)
        Bbar = torch.linalg.solve(lhs, (dt_.squeeze(-1) * B).unsqueeze(-1)).squeeze(-1)
    except torch.linalg.LinAlgError as exc:  # pragma: no cover
        raise ValueError("discretization singular") from exc
    return Abar, Bbar


def discretize(params: SsmParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Discrete transition pair (Abar, Bbar) at step exp(log_dt)."""
    return bilinear_discretize(params.A, params.B, torch.exp(params.log_dt))


def ssm_kernel(Abar: torch.Tensor, Bbar: torch.Tensor, C: torch.Tensor,
               L: int) -> torch.Tensor:
    """Kernel K[k] = C Abar^k Bbar for k = 0..L-1, via matrix doubling.

    Broadcasts over leading batch dims: Abar [..., N, N], Bbar/C [..., N].
    """
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    cols = Bbar.unsqueeze(-1)  # columns Abar^k Bbar
    M = Abar
    while cols.shape[-1] < L:
        cols = torch.cat([cols, M @ cols], dim=-1)
        M = M @ M
    kernel = torch.einsum("...n,...nl->...l", C, cols[..., :L])
    if not torch.isfinite(kernel).all():
        raise RuntimeError("kernel overflow")
    return kernel


def ssm_recurrence_oracle(u: torch.Tensor, Abar: torch.Tensor,
                          Bbar: torch.Tensor, C: torch.Tensor,
                          D: torch.Tensor) -> torch.Tensor:
    """Step-by-step recurrence x_k = Abar x_{k-1} + Bbar u_k, y_k = C x_k + D u_k."""
    x = torch.zeros_like(Bbar)
    out = torch.empty_like(u)
    for k in range(u.shape[-1]):
        x = Abar @ x + Bbar * u[k]
        out[k] = C @ x + D * u[k]
    return out


def fft_causal_conv(kernel: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Causal convolution of kernel and input via length-2L circular FFT."""
    L = u.shape[-1]
    n = 2 * L
    prod = torch.fft.rfft(kernel, n=n) * torch.fft.rfft(u, n=n)
    return torch.fft.irfft(prod, n=n)[..., :L]


def channel_norm(y: torch.Tensor, gamma: torch.Tensor | None = None,
                 beta: torch.Tensor | None = None) -> torch.Tensor:
    """Layer normalization across channels at each time step (epsilon-guarded,
    so an all-constant signal maps to zero)."""
    mean = y.mean(dim=-2, keepdim=True)
    var = y.var(dim=-2, keepdim=True, unbiased=False)
    out = (y - mean) / torch.sqrt(var + NORM_EPS)
    if gamma is not None:
        out = out * gamma.unsqueeze(-1)
    if beta is not None:
        out = out + beta.unsqueeze(-1)
    return out


def _stack_bank(bank: list[SsmParams]):
    Abar, Bbar = [], []
    for p in bank:
        ab, bb = discretize(p)
        Abar.append(ab)
        Bbar.append(bb)
    C = torch.stack([p.C for p in bank])
    D = torch.stack([p.D for p in bank])
    return torch.stack(Abar), torch.stack(Bbar), C, D


def s4_forward(u: torch.Tensor, layer: S4LayerParams,
               normalize: bool = True) -> torch.Tensor:
    """Bidirectional S4 layer on input u [channels x L].

    Per channel: forward causal convolution plus time-reversed backward
    convolution plus feedthrough D u, then channel normalization.
    """
    if not torch.isfinite(u).all():
        raise ValueError("layer diverged: non-finite input")
    L = u.shape[-1]
    Af, Bf, Cf, Df = _stack_bank(layer.forward_ssm)
    Ab, Bb, Cb, _ = _stack_bank(layer.backward_ssm)
    k_fwd = ssm_kernel(Af, Bf, Cf, L)
    k_bwd = ssm_kernel(Ab, Bb, Cb, L)
    y = fft_causal_conv(k_fwd, u)
    y = y + torch.flip(fft_causal_conv(k_bwd, torch.flip(u, dims=[-1])), dims=[-1])
    y = y + Df.unsqueeze(-1) * u
    if not torch.isfinite(y).all():
        raise RuntimeError("layer diverged")
    if not normalize:
        return y
    gamma, beta = layer.norm if layer.norm is not None else (None, None)
    return channel_norm(y, gamma, beta)


class S4Layer(torch.nn.Module):
    """Trainable bidirectional S4 layer for [batch x channels x L] tensors.

    A and B are fixed HiPPO buffers shared across channels; the output maps
    C, feedthrough D, and per-channel step sizes are learned.
    """

    def __init__(self, channels: int, N: int = 64, bidirectional: bool = True,
                 dt_min: float = DT_MIN, dt_max: float = DT_MAX):
        super().__init__()
        self.channels = channels
        self.N = N
        self.bidirectional = bidirectional
        A, B = hippo_matrix(N, dtype=torch.float32)
        self.register_buffer("A", A)
        self.register_buffer("B", B)
        directions = 2 if bidirectional else 1
        self.C = torch.nn.Parameter(
            torch.randn(directions, channels, N) / math.sqrt(N))
        self.D = torch.nn.Parameter(torch.ones(channels))
        self.log_dt = torch.nn.Parameter(
            math.log(dt_min) + torch.rand(directions, channels)
            * (math.log(dt_max) - math.log(dt_min)))
        self.norm = torch.nn.LayerNorm(channels, eps=NORM_EPS)
        self._kernel_cache: dict[int, torch.Tensor] = {}

    def train(self, mode: bool = True):
        # Parameters can change while training; drop any cached kernels.
        self._kernel_cache.clear()
        return super().train(mode)

    def kernels(self, L: int) -> torch.Tensor:
        """Materialize convolution kernels [directions x channels x L].

        In eval mode the kernels are cached per length, since they depend
        only on the (then frozen) parameters.
        """
        if not self.training and L in self._kernel_cache:
            return self._kernel_cache[L]
        Abar, Bbar = bilinear_discretize(self.A, self.B, torch.exp(self.log_dt))
        k = ssm_kernel(Abar, Bbar, self.C, L)
        if not self.training:
            k = k.detach()
            self._kernel_cache[L] = k
        return k

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        L = x.shape[-1]
        k = self.kernels(L)
        y = fft_causal_conv(k[0], x)
        if self.bidirectional:
            y = y + torch.flip(
                fft_causal_conv(k[1], torch.flip(x, dims=[-1])), dims=[-1])
        y = y + self.D.unsqueeze(-1) * x
        if not torch.isfinite(y).all():
            raise RuntimeError("layer diverged")
        return self.norm(y.transpose(-1, -2)).transpose(-1, -2)
