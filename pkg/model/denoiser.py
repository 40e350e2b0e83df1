"""Small conditional encoder-decoder that predicts the added noise.

The base network (stem, residual blocks, resampling, head, time embedding) is the
frozen part. The trainable part is the text projection, the vision encoder for the
visual-prompt grid and, at each of the three resolution levels, the copied block and
its two zero-initialized injection blocks.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoiseSchedule
from .ssm import InjectionBlock, encode_condition, make_zero_block

TRAINABLE_PREFIXES = ("text_proj", "vision_encoder")
TRAINABLE_PARTS = ("copy", "g_in", "g_out")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.double()[:, None] * freqs[None]
    embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        embedding = torch.cat([embedding, torch.zeros_like(embedding[:, :1])], dim=-1)
    return embedding


def _groups(channels: int) -> int:
    for groups in (8, 4, 2):
        if channels % groups == 0:
            return groups
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, emb_dim: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.norm1 = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.emb = nn.Linear(emb_dim, out_channels)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class ConditionedDenoiser(nn.Module):
    def __init__(
        self,
        schedule: NoiseSchedule,
        channels: int = 3,
        text_dim: int = 24,
        widths: tuple[int, int] = (16, 32),
        emb_dim: int = 64,
        encoder: str = "ssm",
        state_dim: int = 4,
    ) -> None:
        super().__init__()
        self.schedule = schedule
        self.emb_dim = emb_dim
        c0, c1 = widths

        self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.text_proj = nn.Linear(text_dim, emb_dim)
        self.vision_encoder = make_zero_block(encoder, channels, c0, state_dim)

        self.stem = nn.Conv2d(channels, c0, 3, padding=1)
        self.enc0 = InjectionBlock(ResBlock(c0, c0, emb_dim), c0, encoder, state_dim)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = InjectionBlock(ResBlock(c1, c1, emb_dim), c0, encoder, state_dim)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.mid = InjectionBlock(ResBlock(c1, c1, emb_dim), c0, encoder, state_dim)
        self.dec1 = ResBlock(2 * c1, c1, emb_dim)
        self.dec0 = ResBlock(c1 + c0, c0, emb_dim)
        self.head = nn.Sequential(nn.GroupNorm(_groups(c0), c0), nn.SiLU(), nn.Conv2d(c0, channels, 3, padding=1))

    @property
    def injection_sites(self) -> tuple[InjectionBlock, ...]:
        return (self.enc0, self.enc1, self.mid)

    @staticmethod
    def is_trainable_name(name: str) -> bool:
        parts = name.split(".")
        return parts[0] in TRAINABLE_PREFIXES or (len(parts) > 1 and parts[1] in TRAINABLE_PARTS)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if self.is_trainable_name(name)]

    def frozen_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if not self.is_trainable_name(name)]

    def freeze_base(self) -> None:
        for name, parameter in self.named_parameters():
            parameter.requires_grad_(self.is_trainable_name(name))

    def unfreeze_base(self) -> None:
        for parameter in self.parameters():
            parameter.requires_grad_(True)

    def sync_copies(self) -> None:
        """Re-initialize every trainable copy from its frozen block."""
        for site in self.injection_sites:
            site.sync_copy()

    def embed(self, t: torch.Tensor, text_embed: torch.Tensor) -> torch.Tensor:
        time = timestep_embedding(t, self.emb_dim).to(text_embed.dtype)
        return self.time_mlp(time) + self.text_proj(text_embed)

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        text_embed: torch.Tensor,
        cond: torch.Tensor | None = None,
    ) -> torch.Tensor:
        emb = self.embed(t, text_embed)
        vpc = [None, None, None]
        if cond is not None:
            encoded = encode_condition(cond, self.vision_encoder)
            vpc = [encoded, F.avg_pool2d(encoded, 2), F.avg_pool2d(encoded, 4)]

        h = self.stem(x)
        h0 = self.enc0(h, emb, x_vpc=vpc[0])
        h1 = self.enc1(self.down0(h0), emb, x_vpc=vpc[1])
        h = self.mid(self.down1(h1), emb, x_vpc=vpc[2])
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.dec1(torch.cat([h, h1], dim=1), emb)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.dec0(torch.cat([h, h0], dim=1), emb)
        return self.head(h)


def build_denoiser(cfg, text_dim: int) -> ConditionedDenoiser:
    """Seeded construction from a ``TrainConfig``; the global RNG is left untouched."""
    schedule = NoiseSchedule.cosine(cfg.schedule_steps)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        state = ConditionedDenoiser(
            schedule,
            channels=cfg.channels,
            text_dim=text_dim,
            widths=tuple(cfg.widths),
            emb_dim=cfg.emb_dim,
            encoder=cfg.conditioning_encoder,
            state_dim=cfg.ssm_state_dim,
        )
    state.freeze_base()
    return state.to(dtype=torch.float64 if cfg.precision == "float64" else torch.float32)
