"""2x2 visual-prompt grids.

Images are channels-last tensors ``(..., H, W, C)`` with values in [0, 1]. A grid
places four same-sized images row-major:

    top-left     example input      top-right     example output
    bottom-left  query input        bottom-right  query output (or grey)
"""
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import GridDimensionError, RangeError

Image = torch.Tensor
ImageGrid = torch.Tensor

GREY = 0.5
QUADRANTS = ("example_in", "example_out", "query_in", "query_out")


def _check_grey(grey: float) -> None:
    if not 0.0 <= grey <= 1.0:
        raise RangeError(f"Grey value {grey} is outside [0, 1]")


def _grid_halves(grid: ImageGrid) -> tuple[int, int]:
    if grid.ndim < 3:
        raise GridDimensionError(f"Grid must be (..., H, W, C), got shape {tuple(grid.shape)}")
    height, width = grid.shape[-3], grid.shape[-2]
    if height % 2 or width % 2:
        raise GridDimensionError(f"Grid dimensions must be even, got {height}x{width}")
    return height // 2, width // 2


def compose(q_tl: Image, q_tr: Image, q_bl: Image, q_br: Image) -> ImageGrid:
    quadrants = (q_tl, q_tr, q_bl, q_br)
    expected = tuple(q_tl.shape)
    for name, quadrant in zip(QUADRANTS, quadrants):
        if quadrant.ndim < 3 or tuple(quadrant.shape) != expected:
            raise GridDimensionError(
                f"Quadrant {name} has shape {tuple(quadrant.shape)}, expected {expected}"
            )
    top = torch.cat([q_tl, q_tr], dim=-2)
    bottom = torch.cat([q_bl, q_br], dim=-2)
    return torch.cat([top, bottom], dim=-3)


def decompose(grid: ImageGrid) -> tuple[Image, Image, Image, Image]:
    h, w = _grid_halves(grid)
    return (
        grid[..., :h, :w, :],
        grid[..., :h, w:, :],
        grid[..., h:, :w, :],
        grid[..., h:, w:, :],
    )


def mask_query(grid: ImageGrid, grey: float = GREY) -> ImageGrid:
    """Grey out the bottom-right quadrant, leaving the other three untouched."""
    _check_grey(grey)
    h, w = _grid_halves(grid)
    masked = grid.clone()
    masked[..., h:, w:, :] = grey
    return masked


def mask_example_row(grid: ImageGrid, grey: float = GREY) -> ImageGrid:
    """Grey out the example pair (top row); used to drop the visual instruction."""
    _check_grey(grey)
    h, _ = _grid_halves(grid)
    masked = grid.clone()
    masked[..., :h, :, :] = grey
    return masked


def known_quadrants(grid: ImageGrid) -> torch.Tensor:
    """``(H, W, 1)`` mask that is 1 on the three conditioning quadrants."""
    h, w = _grid_halves(grid)
    known = torch.ones(grid.shape[-3], grid.shape[-2], 1, dtype=grid.dtype, device=grid.device)
    known[h:, w:, :] = 0
    return known


def grey_image(like: Image, grey: float = GREY) -> Image:
    _check_grey(grey)
    return torch.full_like(like, grey)


def load_image(path: str | Path, dtype: torch.dtype = torch.float32) -> Image:
    with PILImage.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(data).to(dtype)


def save_image(image: Image, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = (image.detach().clamp(0, 1).cpu().double().numpy() * 255.0).round().astype(np.uint8)
    if data.shape[-1] == 1:
        data = data[..., 0]
    PILImage.fromarray(data).save(path, format="PNG")
    return path


def save_grid(grid: ImageGrid, directory: str | Path, stem: str, quadrants: bool = False) -> Path:
    """Write ``<stem>_grid.png`` and, optionally, ``<stem>_q{0..3}.png``."""
    directory = Path(directory)
    grid_path = save_image(grid, directory / f"{stem}_grid.png")
    if quadrants:
        for index, quadrant in enumerate(decompose(grid)):
            save_image(quadrant, directory / f"{stem}_q{index}.png")
    return grid_path
