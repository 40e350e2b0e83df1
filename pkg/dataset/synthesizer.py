"""Procedural pair synthesis: captions are parsed into parametric scenes and rendered.

An edit is the scripted attribute change between a caption and its edited caption,
so the edit direction of every synthesized pair is known.
"""
import re
from dataclasses import dataclass

import torch

from model.errors import ProviderContractError
from model.providers import BACKGROUNDS, COLORS

from .promptgen import POSITIONS, SHAPES, SIZES

CAPTION_PATTERN = re.compile(
    rf"^a (?P<size>{'|'.join(SIZES)}) (?P<color>{'|'.join(COLORS)}) (?P<shape>{'|'.join(SHAPES)}) "
    rf"at the (?P<position>{'|'.join(POSITIONS)}) on a (?P<background>{'|'.join(BACKGROUNDS)}) background$"
)
CENTERS = {
    "left": (0.3, 0.5),
    "right": (0.7, 0.5),
    "top": (0.5, 0.3),
    "bottom": (0.5, 0.7),
    "center": (0.5, 0.5),
}
RADII = {"small": 0.15, "large": 0.3}
JITTER = 0.05
TEXTURE = 0.02


@dataclass(frozen=True)
class Scene:
    size: str
    color: str
    shape: str
    position: str
    background: str


def parse_caption(text: str) -> Scene:
    match = CAPTION_PATTERN.match(text.strip().lower())
    if match is None:
        raise ProviderContractError(f"Caption '{text}' does not describe a renderable scene")
    return Scene(**match.groupdict())


def render(scene: Scene, size: int, offset: tuple[float, float] = (0.0, 0.0), scale: float = 1.0,
           channels: int = 3, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Draw one scene as an ``(size, size, channels)`` image."""
    coords = (torch.arange(size, dtype=torch.float64) + 0.5) / size
    y, x = torch.meshgrid(coords, coords, indexing="ij")
    cx, cy = CENTERS[scene.position]
    dx = x - (cx + offset[0])
    dy = y - (cy + offset[1])
    radius = RADII[scene.size] * scale
    if scene.shape == "circle":
        inside = dx.pow(2) + dy.pow(2) <= radius**2
    elif scene.shape == "square":
        inside = (dx.abs() <= radius) & (dy.abs() <= radius)
    else:
        # apex up
        inside = (dy.abs() <= radius) & (dx.abs() <= (dy + radius) / 2)
    background = torch.tensor(BACKGROUNDS[scene.background], dtype=torch.float64)
    color = torch.tensor(COLORS[scene.color], dtype=torch.float64)
    image = torch.where(inside[..., None], color, background)
    return image[..., :channels].to(dtype)


class PairSynthesizer:
    """Renders one candidate (in, out) pair per seed.

    Seeds vary the object's placement and scale (shared by both images) and a
    light per-image texture noise.
    """

    def __init__(self, image_size: int = 32, channels: int = 3, dtype: torch.dtype = torch.float32) -> None:
        self.image_size = image_size
        self.channels = channels
        self.dtype = dtype

    def synthesize(self, caption: str, edited_caption: str, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
        source, target = parse_caption(caption), parse_caption(edited_caption)
        generator = torch.Generator().manual_seed(seed)
        jitter = (torch.rand(2, generator=generator, dtype=torch.float64) * 2 - 1) * JITTER
        scale = 0.9 + 0.2 * float(torch.rand(1, generator=generator, dtype=torch.float64))
        offset = (float(jitter[0]), float(jitter[1]))
        images = []
        for scene in (source, target):
            image = render(scene, self.image_size, offset, scale, self.channels, torch.float64)
            noise = TEXTURE * torch.randn(image.shape, generator=generator, dtype=torch.float64)
            images.append((image + noise).clamp(0, 1).to(self.dtype))
        return images[0], images[1]
