"""Noise schedule, forward noising, x0 reconstruction and guided sampling.

Tensors passed to the public functions here are channels-last grids
``(B, H, W, C)`` or ``(H, W, C)``; the denoiser itself works channels-first.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F
from einops import rearrange

from .errors import GridDimensionError, RangeError, ReconstructionError, ScheduleError
from .image_grid import known_quadrants

if TYPE_CHECKING:
    from .denoiser import ConditionedDenoiser


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_0 = 1 > alpha_1 > ... > alpha_T = 0."""

    alphas: tuple[float, ...]

    def __post_init__(self) -> None:
        alphas = self.alphas
        if len(alphas) < 2:
            raise ScheduleError("A schedule needs at least two alphas")
        if alphas[0] != 1.0 or alphas[-1] != 0.0:
            raise ScheduleError(f"Schedule endpoints must be 1 and 0, got {alphas[0]} and {alphas[-1]}")
        if any(later >= earlier for earlier, later in zip(alphas, alphas[1:])):
            raise ScheduleError("Schedule alphas must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.alphas) - 1

    @classmethod
    def cosine(cls, T: int = 50, offset: float = 0.008) -> NoiseSchedule:
        if T < 2:
            raise ScheduleError(f"T must be at least 2, got {T}")
        base = math.cos(offset / (1 + offset) * math.pi / 2) ** 2
        alphas = [math.cos((t / T + offset) / (1 + offset) * math.pi / 2) ** 2 / base for t in range(T + 1)]
        alphas[0], alphas[-1] = 1.0, 0.0
        return cls(tuple(alphas))

    @classmethod
    def linear(cls, T: int = 50) -> NoiseSchedule:
        return cls(tuple(1.0 - t / T for t in range(T + 1)))

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise RangeError(f"Timestep {t} outside [0, {self.T}]")
        return self.alphas[t]

    def alpha_like(self, t: int | torch.Tensor, x: torch.Tensor) -> torch.Tensor | float:
        """alpha_t as a float, or as a tensor broadcastable against a batched ``x``."""
        if isinstance(t, int):
            return self.alpha(t)
        t = t.long()
        if t.min() < 0 or t.max() > self.T:
            raise RangeError(f"Timesteps must lie in [0, {self.T}]")
        table = torch.tensor(self.alphas, dtype=x.dtype, device=x.device)
        return table[t].reshape(-1, *([1] * (x.ndim - 1)))


@dataclass(frozen=True)
class LatentSample:
    x_t: torch.Tensor
    t: int | torch.Tensor
    eps: torch.Tensor | None = None


def _sqrt(value: torch.Tensor | float) -> torch.Tensor | float:
    return math.sqrt(value) if isinstance(value, float) else value.sqrt()


def forward_noise(x0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    if x0.shape != eps.shape:
        raise GridDimensionError(f"x0 shape {tuple(x0.shape)} does not match noise shape {tuple(eps.shape)}")
    alpha = sched.alpha_like(t, x0)
    return _sqrt(alpha) * x0 + _sqrt(1 - alpha) * eps


def reconstruct_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t: int | torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Invert the forward noising for a predicted noise (the pseudo output)."""
    if x_t.shape != eps_hat.shape:
        raise GridDimensionError(f"x_t shape {tuple(x_t.shape)} does not match eps shape {tuple(eps_hat.shape)}")
    alpha = sched.alpha_like(t, x_t)
    degenerate = alpha <= 0 if isinstance(alpha, float) else bool((alpha <= 0).any())
    if degenerate:
        raise ReconstructionError("Cannot reconstruct x0 where alpha_t = 0")
    return (x_t - _sqrt(1 - alpha) * eps_hat) / _sqrt(alpha)


class IdentityLatent:
    """Pixel space is the latent space."""

    scale = 1

    def encode(self, grid: torch.Tensor) -> torch.Tensor:
        return grid

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return latent


class PooledLatent:
    """2x average-pool encoder with nearest-neighbour decoder."""

    scale = 2

    def encode(self, grid: torch.Tensor) -> torch.Tensor:
        batched = grid if grid.ndim == 4 else grid[None]
        pooled = F.avg_pool2d(rearrange(batched, "b h w c -> b c h w"), 2)
        pooled = rearrange(pooled, "b c h w -> b h w c")
        return pooled if grid.ndim == 4 else pooled[0]

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return latent.repeat_interleave(2, dim=-3).repeat_interleave(2, dim=-2)


LATENTS = {"identity": IdentityLatent, "pooled": PooledLatent}


def predict_noise(
    state: ConditionedDenoiser,
    x_t: torch.Tensor,
    t: int | torch.Tensor,
    text_embed: torch.Tensor,
    cond_grid: torch.Tensor | None,
) -> torch.Tensor:
    """Channels-last wrapper around the denoiser; returns eps_hat shaped like x_t."""
    batched = x_t.ndim == 4
    x = x_t if batched else x_t[None]
    batch = x.shape[0]
    text = text_embed if text_embed.ndim == 2 else text_embed[None]
    if text.shape[0] != batch:
        text = text.expand(batch, -1)
    if isinstance(t, int):
        t = torch.full((batch,), t, dtype=torch.long, device=x.device)
    cond = None
    if cond_grid is not None:
        cond = cond_grid if cond_grid.ndim == 4 else cond_grid[None]
        if cond.shape[0] != batch:
            cond = cond.expand(batch, -1, -1, -1)
        cond = rearrange(cond, "b h w c -> b c h w")
    eps = state(rearrange(x, "b h w c -> b c h w"), t, text, cond)
    eps = rearrange(eps, "b c h w -> b h w c")
    return eps if batched else eps[0]


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """Descending timesteps in [1, T-1], the range the denoiser is trained on."""
    count = min(steps, T - 1)
    if count < steps:
        logging.debug(f"Requested {steps} sampling steps, using {count} distinct timesteps")
    points = torch.linspace(T - 1, 1, count).round().long().tolist()
    return list(dict.fromkeys(points))


def _posterior_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None,
) -> torch.Tensor:
    if t_prev == 0:
        return x0_hat
    a_t, a_prev = sched.alpha(t), sched.alpha(t_prev)
    eps = (x_t - math.sqrt(a_t) * x0_hat) / math.sqrt(1 - a_t)
    variance = 0.0
    if noise is not None:
        variance = (1 - a_prev) / (1 - a_t) * (1 - a_t / a_prev)
    x_prev = math.sqrt(a_prev) * x0_hat + math.sqrt(max(1 - a_prev - variance, 0.0)) * eps
    if noise is not None:
        x_prev = x_prev + math.sqrt(variance) * noise
    return x_prev


@torch.no_grad()
def sample(
    state: ConditionedDenoiser,
    cond_grid: torch.Tensor,
    text_embed: torch.Tensor,
    guidance_scale: float = 7.5,
    steps: int = 20,
    seed: int = 0,
    *,
    uncond_embed: torch.Tensor | None = None,
    reclamp: bool = True,
    stochastic: bool = True,
    latent: IdentityLatent | PooledLatent | None = None,
) -> torch.Tensor:
    """Classifier-free guided ancestral sampling of a full grid.

    Guidance contrasts the instruction embedding with ``uncond_embed`` (zeros by
    default); the visual prompt conditions both branches. With ``reclamp`` the three
    known quadrants are re-noised from ``cond_grid`` at every step and pasted back at
    the end. ``stochastic=False`` removes the posterior noise.
    """
    sched = state.schedule
    if steps < 1:
        raise RangeError(f"Sampling needs at least one step, got {steps}")
    if steps > sched.T:
        raise RangeError(f"Sampling steps {steps} exceed schedule length {sched.T}")
    latent = latent or IdentityLatent()

    batched = cond_grid.ndim == 4
    cond = cond_grid if batched else cond_grid[None]
    text = text_embed if text_embed.ndim == 2 else text_embed[None]
    uncond = torch.zeros_like(text) if uncond_embed is None else uncond_embed.reshape(-1, text.shape[-1]).expand_as(text)

    cond_latent = latent.encode(cond)
    known = known_quadrants(cond_latent)
    generator = torch.Generator(device="cpu").manual_seed(seed)

    def draw() -> torch.Tensor:
        return torch.randn(cond_latent.shape, generator=generator, dtype=cond_latent.dtype).to(cond_latent.device)

    timesteps = sampling_timesteps(sched.T, steps)
    x = draw()
    for index, t in enumerate(timesteps):
        t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else 0
        if reclamp:
            x = known * forward_noise(cond_latent, t, draw(), sched) + (1 - known) * x
        eps = predict_noise(state, x, t, text, cond_latent)
        if guidance_scale != 1.0:
            eps_uncond = predict_noise(state, x, t, uncond, cond_latent)
            eps = eps_uncond + guidance_scale * (eps - eps_uncond)
        x0_hat = latent.encode(latent.decode(reconstruct_x0(x, eps, t, sched)).clamp(0, 1))
        noise = draw() if stochastic and t_prev > 0 else None
        x = _posterior_step(x, x0_hat, t, t_prev, sched, noise)

    if reclamp:
        x = known * cond_latent + (1 - known) * x
    out = latent.decode(x).clamp(0, 1)
    if reclamp:
        full_known = known_quadrants(out)
        out = full_known * cond + (1 - full_known) * out
    return out if batched else out[0]
