"""Joint training of the conditioning branch: noise matching plus editing-shift and
selective-area matching, with instruction dropout and instruction unification."""
import logging
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path

import matplotlib
import torch
import torch.nn.functional as F
from pydantic import BaseModel
from tqdm import tqdm

from .Manifest import Split
from .ManifestRepository import ManifestRepository
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, derive_seed, step_seed
from .denoiser import ConditionedDenoiser, build_denoiser
from .diffusion import LATENTS, LatentSample, forward_noise, predict_noise
from .editing_shift import editing_shift, editing_shift_loss, pseudo_output
from .errors import CheckpointError, ManifestError, NonFiniteLossError, RangeError
from .image_grid import GREY, decompose, mask_example_row
from .instruction import InstructionRecord, augment_batch
from .providers import Embedder, Providers
from .selective_matching import MaskCache, build_mask, selective_area_loss

# config keys that may differ between an interrupted run and its resumption
RESUMABLE_KEYS = {"steps", "progress", "checkpoint_every"}


@dataclass(frozen=True)
class TrainingExample:
    record_id: str
    train_grid: torch.Tensor
    cond_grid: torch.Tensor
    instruction: InstructionRecord
    mask: torch.Tensor
    text_dropped: bool = False
    visual_dropped: bool = False


@dataclass
class LossTerms:
    diffusion: torch.Tensor
    editing_shift: torch.Tensor
    selective_area: torch.Tensor
    total: torch.Tensor

    def values(self) -> dict[str, float]:
        return {
            "diffusion": float(self.diffusion),
            "editing_shift": float(self.editing_shift),
            "selective_area": float(self.selective_area),
            "total": float(self.total),
        }


class StepRecord(BaseModel):
    step: int
    diffusion: float
    editing_shift: float
    selective_area: float
    total: float


class TrainReport(BaseModel):
    steps: list[StepRecord] = []
    checkpoints: list[str] = []

    @property
    def final_checkpoint(self) -> str | None:
        return self.checkpoints[-1] if self.checkpoints else None

    def mean_total(self, start: int = 0, stop: int | None = None) -> float:
        window = self.steps[start:stop]
        if not window:
            raise RangeError("No training steps in the requested window")
        return sum(record.total for record in window) / len(window)

    def write(self, directory: str | Path) -> Path:
        """Write train_report.jsonl and, when steps ran, loss_curve.png."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "train_report.jsonl"
        with open(path, 'w', encoding='utf-8') as f:
            for record in self.steps:
                f.write(record.model_dump_json() + "\n")
        if self.steps:
            self.plot(directory / "loss_curve.png")
        return path

    def plot(self, path: Path) -> Path:
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        steps = [record.step for record in self.steps]
        fig, ax = plt.subplots(figsize=(7, 4))
        for name in ("total", "diffusion", "editing_shift", "selective_area"):
            ax.plot(steps, [getattr(record, name) for record in self.steps], label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return path


def apply_dropout(
    example: TrainingExample,
    drop_fraction: float,
    rng: random.Random,
    mode: str = "exclusive",
    grey: float = GREY,
) -> TrainingExample:
    """Drop the language instruction (empty text) or the visual one (grey example row).

    ``exclusive``: with probability ``drop_fraction`` exactly one modality, picked by a
    fair coin. ``independent``: each modality with probability ``drop_fraction``.
    """
    if not 0.0 <= drop_fraction <= 1.0:
        raise RangeError(f"Drop fraction {drop_fraction} is outside [0, 1]")
    if mode == "exclusive":
        if rng.random() >= drop_fraction:
            return example
        drop_text = rng.random() < 0.5
        drop_visual = not drop_text
    elif mode == "independent":
        drop_text = rng.random() < drop_fraction
        drop_visual = rng.random() < drop_fraction
    else:
        raise RangeError(f"Unknown dropout mode '{mode}'")
    if drop_text:
        example = replace(example, instruction=InstructionRecord(raw=""), text_dropped=True)
    if drop_visual:
        example = replace(example, cond_grid=mask_example_row(example.cond_grid, grey), visual_dropped=True)
    return example


def loss_terms(
    eps_hat: torch.Tensor,
    noised: LatentSample,
    truth: torch.Tensor,
    masks: torch.Tensor,
    state: ConditionedDenoiser,
    emb: Embedder,
    cfg: TrainConfig,
    latent=None,
) -> LossTerms:
    """Noise-matching MSE plus the weighted auxiliary losses; a term with zero weight is reported as 0."""
    diffusion = F.mse_loss(eps_hat, noised.eps)
    zero = eps_hat.new_zeros(())
    es, sam = zero, zero
    if cfg.lambda_es > 0 or cfg.lambda_sam > 0:
        pseudo = pseudo_output(eps_hat, noised, state.schedule, latent)
        if cfg.lambda_es > 0:
            shift = editing_shift(decompose(pseudo), emb)
            es = editing_shift_loss(shift, editing_shift(decompose(truth), emb)).mean()
        if cfg.lambda_sam > 0:
            sam = selective_area_loss(pseudo, truth, masks, cfg.sam_normalize_by_mask)
    total = diffusion + cfg.lambda_es * es + cfg.lambda_sam * sam
    return LossTerms(diffusion, es, sam, total)


def compute_losses(
    state: ConditionedDenoiser,
    examples: list[TrainingExample],
    t: torch.Tensor,
    eps: torch.Tensor,
    cfg: TrainConfig,
    emb: Embedder,
) -> LossTerms:
    latent = LATENTS[cfg.latent]()
    truth = torch.stack([example.train_grid for example in examples])
    cond = torch.stack([example.cond_grid for example in examples])
    masks = torch.stack([example.mask for example in examples])
    text = emb.embed_texts([example.instruction.text for example in examples], dtype=truth.dtype)
    x_t = forward_noise(latent.encode(truth), t, eps, state.schedule)
    eps_hat = predict_noise(state, x_t, t, text, latent.encode(cond))
    return loss_terms(eps_hat, LatentSample(x_t, t, eps), truth, masks, state, emb, cfg, latent)


def draw_noise(examples: list[TrainingExample], cfg: TrainConfig, T: int, generator: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Timesteps from [1, T-1] and latent-shaped Gaussian noise."""
    scale = LATENTS[cfg.latent].scale
    height, width, channels = examples[0].train_grid.shape
    t = torch.randint(1, T, (len(examples),), generator=generator)
    shape = (len(examples), height // scale, width // scale, channels)
    eps = torch.randn(shape, generator=generator, dtype=torch.float64).to(examples[0].train_grid.dtype)
    return t, eps


def train_step(
    state: ConditionedDenoiser,
    optimizer: torch.optim.Optimizer,
    examples: list[TrainingExample],
    cfg: TrainConfig,
    emb: Embedder,
    generator: torch.Generator,
    step: int = 0,
    dump_dir: str | Path = ".",
) -> dict[str, float]:
    t, eps = draw_noise(examples, cfg, state.schedule.T, generator)
    losses = compute_losses(state, examples, t, eps, cfg, emb)
    values = losses.values()
    if not all(math.isfinite(value) for value in values.values()):
        dump_path = Path(dump_dir) / f"nonfinite_step_{step}.pt"
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "step": step,
            "losses": values,
            "record_ids": [example.record_id for example in examples],
            "instructions": [example.instruction.text for example in examples],
            "t": t,
            "eps": eps,
        }, dump_path)
        raise NonFiniteLossError(f"Non-finite loss at step {step}: {values}", dump_path=str(dump_path))

    optimizer.zero_grad(set_to_none=True)
    losses.total.backward()
    optimizer.step()
    return values


def load_examples(manifest: ManifestRepository, cfg: TrainConfig, providers: Providers) -> list[TrainingExample]:
    """All training records with their grids and selective masks, loaded before step 0."""
    records = manifest.split(Split.TRAIN)
    if not records:
        raise ManifestError(f"Manifest under {manifest.root} has no training records")
    dtype = torch.float64 if cfg.precision == "float64" else torch.float32
    cache = MaskCache()
    examples = []
    for record in records:
        train_grid, cond_grid = manifest.load_grids(record, dtype)
        selective = cache.get_or_build(
            record.record_id,
            lambda: build_mask(train_grid, providers.segmenter, providers.unifier, cfg.selected_classes),
        )
        examples.append(TrainingExample(
            record.record_id, train_grid, cond_grid, InstructionRecord(record.instruction), selective.mask
        ))
    logging.info(f"Loaded {len(examples)} training records, {len(cache)} selective masks")
    return examples


def pretrain_base(state: ConditionedDenoiser, examples: list[TrainingExample], cfg: TrainConfig, emb: Embedder) -> None:
    """Plain unconditioned noise matching of the base, which is then frozen and re-copied."""
    state.unfreeze_base()
    parameters = state.frozen_parameters() + list(state.text_proj.parameters())
    optimizer = torch.optim.AdamW(parameters, lr=cfg.base_learning_rate, weight_decay=cfg.weight_decay)
    latent = LATENTS[cfg.latent]()
    for step in tqdm(range(cfg.base_steps), desc="base", disable=not cfg.progress):
        rng = random.Random(derive_seed(cfg.seed, "base", step))
        batch = [examples[rng.randrange(len(examples))] for _ in range(cfg.batch_size)]
        generator = torch.Generator().manual_seed(derive_seed(cfg.seed, "base-noise", step))
        t, eps = draw_noise(batch, cfg, state.schedule.T, generator)
        truth = torch.stack([example.train_grid for example in batch])
        text = emb.embed_texts([example.instruction.text for example in batch], dtype=truth.dtype)
        x_t = forward_noise(latent.encode(truth), t, eps, state.schedule)
        loss = F.mse_loss(predict_noise(state, x_t, t, text, None), eps)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    logging.info(f"Pretrained the base for {cfg.base_steps} steps")
    state.freeze_base()
    state.sync_copies()


def _check_resumable(saved: TrainConfig, cfg: TrainConfig) -> None:
    before = saved.model_dump(exclude=RESUMABLE_KEYS)
    after = cfg.model_dump(exclude=RESUMABLE_KEYS)
    changed = sorted(key for key in before if before[key] != after[key])
    if changed:
        raise CheckpointError(f"Cannot resume: config differs from the checkpoint in {changed}")


def train(
    manifest: ManifestRepository,
    cfg: TrainConfig,
    providers: Providers,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> TrainReport:
    out_dir = Path(out_dir)
    examples = load_examples(manifest, cfg, providers)
    emb = providers.embedder

    if resume is not None:
        checkpoint = load_checkpoint(resume)
        _check_resumable(checkpoint.config, cfg)
        state, start = checkpoint.state, checkpoint.step
        logging.info(f"Resuming from {resume} at step {start}")
    else:
        state, start = build_denoiser(cfg, emb.dim), 0
        if cfg.base_steps:
            pretrain_base(state, examples, cfg, emb)

    optimizer = torch.optim.AdamW(state.trainable_parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    if resume is not None and checkpoint.optimizer_state is not None:
        optimizer.load_state_dict(checkpoint.optimizer_state)

    report = TrainReport()
    state.train()
    for step in tqdm(range(start, cfg.steps), desc="train", disable=not cfg.progress):
        rng = random.Random(step_seed(cfg.seed, step))
        batch = [examples[rng.randrange(len(examples))] for _ in range(cfg.batch_size)]
        instructions = augment_batch(
            [example.instruction for example in batch], providers.unifier, step_seed(cfg.liu_seed, step), cfg.liu_fraction
        )
        batch = [
            apply_dropout(replace(example, instruction=instruction), cfg.drop_fraction, rng, cfg.drop_mode, cfg.grey)
            for example, instruction in zip(batch, instructions)
        ]
        generator = torch.Generator().manual_seed(step_seed(cfg.seed, step))
        values = train_step(state, optimizer, batch, cfg, emb, generator, step + 1, out_dir)
        report.steps.append(StepRecord(step=step + 1, **values))
        logging.debug(f"Step {step + 1}: {values}")
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            path = save_checkpoint(out_dir / f"checkpoint_{step + 1:05d}.pt", state, cfg, step + 1, emb.dim, optimizer)
            report.checkpoints.append(str(path))

    final = save_checkpoint(out_dir / "checkpoint_final.pt", state, cfg, max(cfg.steps, start), emb.dim, optimizer)
    report.checkpoints.append(str(final))
    report.write(out_dir)
    if report.steps:
        logging.info(f"Trained {len(report.steps)} steps, final total loss {report.steps[-1].total:.5f}")
    return report
