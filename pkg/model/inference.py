"""Instruction-guided editing with a trained conditioned denoiser."""
import logging

import torch

from .Manifest import ManifestRecord
from .config import TrainConfig, derive_seed
from .denoiser import ConditionedDenoiser
from .diffusion import LATENTS, sample
from .errors import GridDimensionError
from .image_grid import compose, decompose, grey_image, mask_query
from .instruction import unify_for_inference
from .providers import Providers


def build_condition(example_in: torch.Tensor, example_out: torch.Tensor, query_in: torch.Tensor, grey: float) -> torch.Tensor:
    for name, image in (("example_out", example_out), ("query_in", query_in)):
        if image.shape != example_in.shape:
            raise GridDimensionError(f"{name} has shape {tuple(image.shape)}, example_in has {tuple(example_in.shape)}")
    return mask_query(compose(example_in, example_out, query_in, grey_image(query_in, grey)), grey)


def edit_grid(
    state: ConditionedDenoiser,
    cfg: TrainConfig,
    providers: Providers,
    cond_grid: torch.Tensor,
    instruction: str,
    seed: int,
    unify: bool = True,
) -> torch.Tensor:
    """Sample the full grid for a conditioning grid and a raw instruction."""
    text = unify_for_inference(instruction, providers.unifier) if unify else instruction
    logging.debug(f"Editing with instruction '{text}'")
    emb = providers.embedder
    dtype = next(state.parameters()).dtype
    return sample(
        state,
        cond_grid.to(dtype),
        emb.embed_text(text).to(dtype),
        guidance_scale=cfg.guidance_scale,
        steps=cfg.sample_steps,
        seed=seed,
        uncond_embed=emb.embed_text("").to(dtype),
        reclamp=cfg.reclamp,
        stochastic=cfg.stochastic,
        latent=LATENTS[cfg.latent](),
    )


def edit_image(
    state: ConditionedDenoiser,
    cfg: TrainConfig,
    providers: Providers,
    example_in: torch.Tensor,
    example_out: torch.Tensor,
    query_in: torch.Tensor,
    instruction: str,
    seed: int,
    unify: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns the edited query (bottom-right quadrant) and the full sampled grid."""
    cond = build_condition(example_in, example_out, query_in, cfg.grey)
    grid = edit_grid(state, cfg, providers, cond, instruction, seed, unify)
    return decompose(grid)[3], grid


def record_editor(state: ConditionedDenoiser, cfg: TrainConfig, providers: Providers, seed: int, unify: bool = True):
    """Editor over manifest records, seeded per record."""

    def edit(record: ManifestRecord, cond_grid: torch.Tensor) -> torch.Tensor:
        return edit_grid(
            state, cfg, providers, cond_grid, record.instruction, derive_seed(seed, record.record_id), unify
        ).to(cond_grid.dtype)

    return edit
