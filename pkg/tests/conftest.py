import pytest
import torch

from dataset import MockPromptGenerator, run_pipeline
from model import ManifestRepository, TrainConfig, build_providers

TINY = {
    "image_size": 8,
    "widths": [4, 8],
    "emb_dim": 8,
    "schedule_steps": 10,
    "sample_steps": 4,
    "precision": "float64",
    "groups": 6,
    "candidates": 2,
    "packs_per_group": 1,
    "steps": 3,
    "batch_size": 2,
    "checkpoint_every": 0,
    "learning_rate": 1e-3,
    "guidance_scale": 2.0,
    "progress": False,
}


def tiny(**overrides) -> TrainConfig:
    return TrainConfig(**(TINY | overrides))


def write_env(path, **overrides) -> str:
    values = TINY | overrides
    lines = []
    for key, value in values.items():
        if isinstance(value, list):
            value = ",".join(str(item) for item in value)
        lines.append(f"{key.upper()}={value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return tiny()


@pytest.fixture
def providers(tiny_config):
    return build_providers(tiny_config)


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory) -> ManifestRepository:
    cfg = tiny()
    root = tmp_path_factory.mktemp("toy")
    shared = build_providers(cfg)
    run_pipeline(cfg, root, MockPromptGenerator(), shared.embedder, shared.unifier, seed=3)
    return ManifestRepository.load(root / ManifestRepository.MANIFEST)


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(0)
