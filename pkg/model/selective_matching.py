"""Selective area matching: masked reconstruction penalty on detail-critical classes."""
import threading
from dataclasses import dataclass
from typing import Callable

import torch

from .errors import GridDimensionError, ProviderContractError
from .providers import InstructionUnifier, Segmenter

DEFAULT_SELECTED = ("person", "face", "animal")


@dataclass(frozen=True)
class SelectiveMask:
    mask: torch.Tensor
    source_classes: tuple[str, ...]


def build_mask(
    truth_grid: torch.Tensor,
    seg: Segmenter,
    uni: InstructionUnifier,
    selected: list[str] | tuple[str, ...],
) -> SelectiveMask:
    label_map, classes = seg.segment(truth_grid)
    if tuple(label_map.shape) != tuple(truth_grid.shape[-3:-1]):
        raise ProviderContractError(
            f"Segmenter label map {tuple(label_map.shape)} does not match grid {tuple(truth_grid.shape[-3:-1])}"
        )
    declared = {class_id for class_id, _ in classes}
    found = {int(label) for label in label_map.unique()}
    if not found <= declared:
        raise ProviderContractError(f"Segmenter labels {sorted(found - declared)} are missing from its class table")

    filtered = uni.filter_classes([name for _, name in classes], list(selected))
    ids = [class_id for class_id, name in classes if name in filtered]
    mask = torch.isin(label_map, torch.tensor(ids, dtype=label_map.dtype, device=label_map.device))
    return SelectiveMask(mask.to(truth_grid.dtype), tuple(filtered))


def selective_area_loss(
    pseudo_grid: torch.Tensor,
    truth_grid: torch.Tensor,
    mask: SelectiveMask | torch.Tensor,
    normalize_by_mask: bool = False,
) -> torch.Tensor:
    """Masked squared error summed over pixels, divided by the total pixel count N.

    Channels are averaged; batched grids are averaged over the batch. With
    ``normalize_by_mask`` the divisor is the number of masked pixels instead.
    """
    mask = mask.mask if isinstance(mask, SelectiveMask) else mask
    if pseudo_grid.shape != truth_grid.shape:
        raise GridDimensionError(f"Grid shapes differ: {tuple(pseudo_grid.shape)} vs {tuple(truth_grid.shape)}")
    if tuple(mask.shape[-2:]) != tuple(truth_grid.shape[-3:-1]):
        raise GridDimensionError(f"Mask shape {tuple(mask.shape)} does not match grid {tuple(truth_grid.shape)}")
    weights = mask.to(pseudo_grid.dtype).unsqueeze(-1)
    squared = (pseudo_grid * weights - truth_grid * weights).pow(2)
    total = squared.sum(dim=(-3, -2))
    if normalize_by_mask:
        divisor = weights.sum(dim=(-3, -2)).clamp_min(1.0)
    else:
        divisor = truth_grid.shape[-3] * truth_grid.shape[-2]
    return (total / divisor).mean()


class MaskCache:
    """Read-mostly map from record id to mask; insertion is atomic."""

    def __init__(self) -> None:
        self._masks: dict[str, SelectiveMask] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._masks)

    def get_or_build(self, key: str, build: Callable[[], SelectiveMask]) -> SelectiveMask:
        cached = self._masks.get(key)
        if cached is not None:
            return cached
        built = build()
        with self._lock:
            return self._masks.setdefault(key, built)
