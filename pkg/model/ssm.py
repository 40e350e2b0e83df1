"""Zero-initialized state-space conditioning.

``Ss2dBlock`` is a minimal 2D selective-scan block: a 1x1 input projection, four
directional diagonal linear recurrences over the cross-scanned feature map, an average
merge and a zero-initialized output projection. ``InjectionBlock`` wraps a frozen
denoiser block as

    y = F(x; frozen) + G_out(F_copy(x + G_in(x_vpc)))

so a freshly built block reproduces the frozen block exactly.
"""
import copy
import math

import torch
import torch.nn as nn
from einops import rearrange

from .errors import GridDimensionError

SCAN_ORDERS = ("row", "row_reversed", "column", "column_reversed")


def cross_scan(feature_map: torch.Tensor) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B, 4, C, H*W)`` in the order of ``SCAN_ORDERS``."""
    rows = rearrange(feature_map, "b c h w -> b c (h w)")
    columns = rearrange(feature_map, "b c h w -> b c (w h)")
    return torch.stack([rows, rows.flip(-1), columns, columns.flip(-1)], dim=1)


def cross_merge(sequences: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Undo each traversal of ``cross_scan`` and average the four maps."""
    rows = sequences[:, 0] + sequences[:, 1].flip(-1)
    columns = sequences[:, 2] + sequences[:, 3].flip(-1)
    merged = rearrange(rows, "b c (h w) -> b c h w", h=height, w=width)
    merged = merged + rearrange(columns, "b c (w h) -> b c h w", h=height, w=width)
    return merged / len(SCAN_ORDERS)


def linear_scan(x: torch.Tensor, A: torch.Tensor, B: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """Diagonal linear recurrence along the last axis.

    ``x`` is ``(batch, K, D, L)``; ``A``, ``B``, ``C`` are ``(K, D, N)``. Computes
    h_l = A * h_{l-1} + B * x_l and y_l = sum_n C_n h_{l,n}. The recurrence is
    time-invariant, so it is evaluated as a causal convolution with kernel
    sum_n C_n A_n^m B_n through the FFT.
    """
    length = x.shape[-1]
    powers = torch.arange(length, dtype=x.dtype, device=x.device)
    kernel = (C * B).unsqueeze(-1) * A.unsqueeze(-1).pow(powers)
    kernel = kernel.sum(dim=-2)
    size = 2 * length
    spectrum = torch.fft.rfft(x, n=size) * torch.fft.rfft(kernel, n=size)
    return torch.fft.irfft(spectrum, n=size)[..., :length]


class Ss2dBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, inner_channels: int = 8, state_dim: int = 4) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        directions = len(SCAN_ORDERS)

        self.in_proj = nn.Conv2d(in_channels, inner_channels, 1)
        bound = 1.0 / math.sqrt(in_channels)
        nn.init.uniform_(self.in_proj.weight, -bound, bound)
        nn.init.uniform_(self.in_proj.bias, -bound, bound)

        # A = sigmoid(A_logit) keeps every decay inside (0, 1)
        self.A_logit = nn.Parameter(torch.empty(directions, inner_channels, state_dim).uniform_(1.0, 4.0))
        self.B = nn.Parameter(torch.empty(directions, inner_channels, state_dim).uniform_(-0.5, 0.5))
        self.C = nn.Parameter(torch.empty(directions, inner_channels, state_dim).uniform_(-0.5, 0.5))
        self.norm = nn.GroupNorm(1, inner_channels)

        self.out_proj = nn.Conv2d(inner_channels, out_channels, 1)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    @property
    def A(self) -> torch.Tensor:
        return torch.sigmoid(self.A_logit)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise GridDimensionError(f"Expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        height, width = x.shape[-2:]
        u = self.in_proj(x)
        y = linear_scan(cross_scan(u), self.A, self.B, self.C)
        merged = self.norm(cross_merge(y, height, width))
        return self.out_proj(merged)


class ZeroConv2d(nn.Module):
    """1x1 convolution with zero weight and bias."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


def make_zero_block(kind: str, in_channels: int, out_channels: int, state_dim: int = 4) -> nn.Module:
    if kind == "ssm":
        return Ss2dBlock(in_channels, out_channels, inner_channels=max(4, out_channels // 2), state_dim=state_dim)
    if kind == "zero_conv":
        return ZeroConv2d(in_channels, out_channels)
    raise ValueError(f"Unknown conditioning encoder '{kind}'")


def encode_condition(grid_latent: torch.Tensor, block: nn.Module) -> torch.Tensor:
    """Processed embedding of the visual-prompt grid; all zeros for a fresh block."""
    return block(grid_latent)


class InjectionBlock(nn.Module):
    def __init__(self, frozen: nn.Module, cond_channels: int, kind: str = "ssm", state_dim: int = 4) -> None:
        super().__init__()
        self.frozen = frozen
        self.copy = copy.deepcopy(frozen)
        self.g_in = make_zero_block(kind, cond_channels, frozen.in_channels, state_dim)
        self.g_out = make_zero_block(kind, frozen.out_channels, frozen.out_channels, state_dim)

    @property
    def in_channels(self) -> int:
        return self.frozen.in_channels

    @property
    def out_channels(self) -> int:
        return self.frozen.out_channels

    def sync_copy(self) -> None:
        self.copy.load_state_dict(self.frozen.state_dict())

    def forward(self, x: torch.Tensor, *args: torch.Tensor, x_vpc: torch.Tensor | None = None) -> torch.Tensor:
        y = self.frozen(x, *args)
        if x_vpc is None:
            return y
        if x_vpc.shape[-2:] != x.shape[-2:]:
            raise GridDimensionError(
                f"Condition features {tuple(x_vpc.shape[-2:])} do not match block input {tuple(x.shape[-2:])}"
            )
        return y + self.g_out(self.copy(x + self.g_in(x_vpc), *args))


def inject(x: torch.Tensor, x_vpc: torch.Tensor | None, block: InjectionBlock, *args: torch.Tensor) -> torch.Tensor:
    return block(x, *args, x_vpc=x_vpc)
