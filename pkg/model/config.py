import hashlib
import logging
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TrainConfig(BaseModel):
    """Every knob of a run in one flat namespace; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    # denoiser and schedule
    image_size: int = Field(32, ge=4)
    channels: int = Field(3, ge=1)
    widths: list[int] = [16, 32]
    emb_dim: int = Field(64, ge=2)
    schedule_steps: int = Field(50, ge=2)
    conditioning_encoder: Literal["ssm", "zero_conv"] = "ssm"
    ssm_state_dim: int = Field(4, ge=1)
    latent: Literal["identity", "pooled"] = "identity"
    precision: Literal["float32", "float64"] = "float32"
    grey: float = Field(0.5, ge=0.0, le=1.0)

    # providers
    embedder: str = "mock"
    segmenter: str = "mock"
    unifier: str = "mock"
    promptgen: str = "mock"
    llm_model: str = "gpt-4o-mini"
    llm_seed: int = 0

    # dataset
    groups: int = Field(60, ge=1)
    candidates: int = Field(5, ge=1)
    packs_per_group: int = Field(3, ge=1)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    selected_classes: list[str] = ["person", "face", "animal"]

    # training
    steps: int = Field(500, ge=0)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    lambda_es: float = Field(0.1, ge=0.0)
    lambda_sam: float = Field(1.0, ge=0.0)
    sam_normalize_by_mask: bool = False
    drop_fraction: float = Field(0.15, ge=0.0, le=1.0)
    drop_mode: Literal["exclusive", "independent"] = "exclusive"
    liu_fraction: float = Field(0.5, ge=0.0, le=1.0)
    liu_seed: int = 0
    seed: int = 0
    checkpoint_every: int = Field(100, ge=0)
    base_steps: int = Field(0, ge=0)
    base_learning_rate: float = Field(1e-3, gt=0.0)
    progress: bool = True

    # sampling
    guidance_scale: float = 7.5
    sample_steps: int = Field(20, ge=1)
    reclamp: bool = True
    stochastic: bool = True

    @field_validator("widths", "selected_classes", mode="before")
    @classmethod
    def split_commas(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @model_validator(mode="after")
    def check_geometry(self) -> "TrainConfig":
        if len(self.widths) != 2:
            raise ValueError("widths must list exactly two channel counts")
        # the grid is downsampled twice in the denoiser, once more by the pooled latent
        factor = 4 if self.latent == "identity" else 8
        if (2 * self.image_size) % factor:
            raise ValueError(f"image_size {self.image_size} gives a grid not divisible by {factor}")
        if self.sample_steps > self.schedule_steps:
            raise ValueError("sample_steps cannot exceed schedule_steps")
        return self


def derive_seed(seed: int, *parts: object) -> int:
    """Stable 63-bit child seed for a (seed, parts...) path, independent of hash randomization."""
    key = ":".join(str(part) for part in (seed, *parts)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def step_seed(seed: int, step: int) -> int:
    return seed * 1_000_003 + step


def load_config(path: str | Path | None = None, **overrides: Any) -> TrainConfig:
    """Read a flat KEY=VALUE file (keys case-insensitive) and apply non-None overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file {path} does not exist")
        values = {key.lower(): value for key, value in dotenv_values(path).items()}
    values.update({key: value for key, value in overrides.items() if value is not None})
    return TrainConfig(**values)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: str
    paths: dict[str, str]
    seed: int
    config: TrainConfig

    def log(self) -> None:
        logging.info(f"Resolved {self.subcommand} config: {self.model_dump_json()}")

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "run_config.json"
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.model_dump_json(indent=2))
        return path
