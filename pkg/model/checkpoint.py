"""Versioned checkpoints with separate namespaces for the frozen base and the conditioning branch."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from pydantic import ValidationError

from .config import TrainConfig
from .denoiser import ConditionedDenoiser
from .diffusion import NoiseSchedule
from .errors import CheckpointError, ScheduleError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    state: ConditionedDenoiser
    config: TrainConfig
    step: int
    text_dim: int
    optimizer_state: dict[str, Any] | None = None


def save_checkpoint(
    path: str | Path,
    state: ConditionedDenoiser,
    cfg: TrainConfig,
    step: int,
    text_dim: int,
    optimizer: torch.optim.Optimizer | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = state.state_dict()
    payload = {
        "version": FORMAT_VERSION,
        "step": step,
        "text_dim": text_dim,
        "config": cfg.model_dump(mode="json"),
        "schedule": list(state.schedule.alphas),
        "denoiser": {name: value for name, value in weights.items() if not state.is_trainable_name(name)},
        "ssm_conditioning": {name: value for name, value in weights.items() if state.is_trainable_name(name)},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)
    logging.info(f"Saved checkpoint at step {step} to {path}")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("version") != FORMAT_VERSION:
        found = payload.get("version") if isinstance(payload, dict) else None
        raise CheckpointError(f"Checkpoint {path} has format version {found}, expected {FORMAT_VERSION}")

    try:
        cfg = TrainConfig(**payload["config"])
        schedule = NoiseSchedule(tuple(payload["schedule"]))
    except (KeyError, ValidationError, ScheduleError) as e:
        raise CheckpointError(f"Checkpoint {path} has an invalid config or schedule: {e}") from e

    state = ConditionedDenoiser(
        schedule,
        channels=cfg.channels,
        text_dim=payload["text_dim"],
        widths=tuple(cfg.widths),
        emb_dim=cfg.emb_dim,
        encoder=cfg.conditioning_encoder,
        state_dim=cfg.ssm_state_dim,
    ).to(dtype=torch.float64 if cfg.precision == "float64" else torch.float32)
    try:
        state.load_state_dict(payload["denoiser"] | payload["ssm_conditioning"], strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint {path} does not match its config: {e}") from e
    state.freeze_base()
    return Checkpoint(state, cfg, payload["step"], payload["text_dim"], payload.get("optimizer"))
