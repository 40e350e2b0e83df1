"""Two-phase dataset pipeline: instruction groups, best-of-K pair synthesis, grid packing."""
import logging
import math
import random
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import torch
from pydantic import ValidationError
from tqdm import tqdm

from model.Manifest import CaptionPair, Split
from model.ManifestRepository import ManifestRepository
from model.config import TrainConfig, derive_seed
from model.errors import GIEError, RangeError
from model.evaluator import directional_similarity
from model.image_grid import GREY, compose, mask_query
from model.providers import Embedder, InstructionUnifier, PromptGenerator

from .synthesizer import PairSynthesizer

MIN_PAIRS = 2


@dataclass(frozen=True)
class SynthesizedPair:
    caption: CaptionPair
    image_in: torch.Tensor
    image_out: torch.Tensor
    score: float
    seed: int


@dataclass(frozen=True)
class EditGroup:
    group_id: str
    instruction: str
    caption_pairs: list[CaptionPair]
    seed: int
    image_pairs: list[SynthesizedPair] = field(default_factory=list)


@dataclass(frozen=True)
class PackedGrid:
    group_id: str
    pair_indices: tuple[int, int]
    train_grid: torch.Tensor
    cond_grid: torch.Tensor
    instruction: str
    seed: int


@dataclass
class PipelineSummary:
    groups: int
    pairs: int
    packed: dict[str, int]
    manifest_path: Path


def generate_groups(n_groups: int, promptgen: PromptGenerator, seed: int, pairs_per_group: int = 5) -> list[EditGroup]:
    if n_groups < 1:
        raise RangeError(f"Need at least one group, got {n_groups}")
    groups = []
    for index in range(n_groups):
        group_seed = derive_seed(seed, "group", index)
        try:
            draft = promptgen.generate(group_seed)
        except (GIEError, ValidationError) as e:
            logging.warning(f"Skipping group {index}: generator failed: {e}")
            continue
        if len(draft.caption_pairs) != pairs_per_group:
            logging.warning(f"Skipping group {index}: {len(draft.caption_pairs)} caption pairs, expected {pairs_per_group}")
            continue
        groups.append(EditGroup(f"g{index:04d}", draft.instruction, list(draft.caption_pairs), group_seed))
    logging.info(f"Generated {len(groups)} of {n_groups} instruction groups")
    return groups


def best_candidate(scores: list[float]) -> int | None:
    """Index of the highest finite score, first on ties; None if no score is finite."""
    finite = [(score, -index) for index, score in enumerate(scores) if math.isfinite(score)]
    return -max(finite)[1] if finite else None


def synthesize_pairs(
    group: EditGroup,
    synth: PairSynthesizer,
    K: int,
    emb: Embedder,
    seed: int,
) -> EditGroup | None:
    """Keep the best of K seeded candidates per caption pair; None if fewer than two pairs survive."""
    if K < 1:
        raise RangeError(f"Need at least one candidate per pair, got K={K}")
    kept = []
    for pair_index, pair in enumerate(group.caption_pairs):
        candidates, scores = [], []
        for candidate in range(K):
            candidate_seed = derive_seed(seed, group.group_id, pair_index, candidate)
            try:
                image_in, image_out = synth.synthesize(pair.caption, pair.edited_caption, candidate_seed)
            except GIEError as e:
                logging.debug(f"Candidate {candidate} of {group.group_id}/{pair_index} invalid: {e}")
                continue
            if torch.equal(image_in, image_out):
                continue
            score = directional_similarity(image_in, image_out, pair.caption, pair.edited_caption, emb)
            candidates.append((image_in, image_out, candidate_seed))
            scores.append(score)
        best = best_candidate(scores)
        if best is None:
            logging.warning(f"Dropping pair {pair_index} of {group.group_id}: no valid candidate")
            continue
        image_in, image_out, candidate_seed = candidates[best]
        kept.append(SynthesizedPair(pair, image_in, image_out, scores[best], candidate_seed))

    if len(kept) < MIN_PAIRS:
        logging.warning(f"Dropping group {group.group_id}: only {len(kept)} valid pairs")
        return None
    return replace(group, image_pairs=kept)


def split_groups(groups: list[EditGroup], test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Shuffle group ids and hold out round(test_fraction * n) of them, keeping one for training."""
    ids = sorted(group.group_id for group in groups)
    random.Random(derive_seed(seed, "split")).shuffle(ids)
    held_out = min(round(len(ids) * test_fraction), max(len(ids) - 1, 0))
    return sorted(ids[held_out:]), sorted(ids[:held_out])


def pack_training_grids(groups: list[EditGroup], seed: int, packs_per_group: int = 1, grey: float = GREY) -> list[PackedGrid]:
    """Up to ``packs_per_group`` distinct pairings per group, each composed as (example, query)."""
    packed = []
    for group in groups:
        if len(group.image_pairs) < MIN_PAIRS:
            logging.warning(f"Not packing {group.group_id}: fewer than {MIN_PAIRS} pairs")
            continue
        pack_seed = derive_seed(seed, "pack", group.group_id)
        rng = random.Random(pack_seed)
        pairings = list(combinations(range(len(group.image_pairs)), 2))
        for pairing in rng.sample(pairings, min(packs_per_group, len(pairings))):
            order = list(pairing)
            rng.shuffle(order)
            example, query = group.image_pairs[order[0]], group.image_pairs[order[1]]
            train_grid = compose(example.image_in, example.image_out, query.image_in, query.image_out)
            packed.append(PackedGrid(
                group.group_id, (order[0], order[1]), train_grid, mask_query(train_grid, grey),
                group.instruction, pack_seed,
            ))
    return packed


def run_pipeline(
    cfg: TrainConfig,
    out_dir: str | Path,
    promptgen: PromptGenerator,
    emb: Embedder,
    uni: InstructionUnifier,
    seed: int,
) -> PipelineSummary:
    dtype = torch.float64 if cfg.precision == "float64" else torch.float32
    synth = PairSynthesizer(cfg.image_size, cfg.channels, dtype)
    groups = []
    for group in tqdm(generate_groups(cfg.groups, promptgen, seed), desc="synthesize", disable=not cfg.progress):
        synthesized = synthesize_pairs(group, synth, cfg.candidates, emb, seed)
        if synthesized is not None:
            groups.append(synthesized)
    if not groups:
        raise RangeError("No group survived pair synthesis")

    train_ids, ood_ids = split_groups(groups, cfg.test_fraction, seed)
    repository = ManifestRepository(out_dir)
    for group in groups:
        split = Split.TRAIN if group.group_id in train_ids else Split.OUT_OF_DOMAIN
        repository.add_group(
            group.group_id, split, group.instruction, uni.unify(group.instruction),
            [(pair.caption.caption, pair.caption.edited_caption, pair.image_in, pair.image_out, pair.score, pair.seed)
             for pair in group.image_pairs],
            group.seed,
        )

    # training groups get one extra pairing held back as the in-domain split
    train_groups = [group for group in groups if group.group_id in train_ids]
    counts = {split.value: 0 for split in Split}
    packs = pack_training_grids(train_groups, seed, cfg.packs_per_group + 1, cfg.grey)
    seen: dict[str, int] = {}
    for pack in packs:
        seen[pack.group_id] = seen.get(pack.group_id, 0) + 1
        split = Split.TRAIN if seen[pack.group_id] <= cfg.packs_per_group else Split.IN_DOMAIN
        repository.add_record(pack.group_id, split, pack.pair_indices, pack.train_grid, pack.cond_grid, pack.seed)
        counts[split.value] += 1
    ood_groups = [group for group in groups if group.group_id in ood_ids]
    for pack in pack_training_grids(ood_groups, seed, cfg.packs_per_group, cfg.grey):
        repository.add_record(pack.group_id, Split.OUT_OF_DOMAIN, pack.pair_indices, pack.train_grid, pack.cond_grid, pack.seed)
        counts[Split.OUT_OF_DOMAIN.value] += 1

    manifest_path = repository.save()
    summary = PipelineSummary(len(groups), repository.pair_count(), counts, manifest_path)
    logging.info(f"Dataset summary: {summary.groups} groups, {summary.pairs} pairs, packed records {summary.packed}")
    return summary
