"""Edit-quality metrics and the split evaluation harness."""
import logging
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from pydantic import BaseModel, Field
from scipy import linalg
from tqdm import tqdm

from .Manifest import ManifestRecord, Split
from .ManifestRepository import ManifestRepository
from .editing_shift import safe_cosine
from .errors import GridDimensionError, RangeError
from .image_grid import decompose
from .providers import Providers
from .selective_matching import build_mask, selective_area_loss

RIDGE = 1e-6

GridEditor = Callable[[ManifestRecord, torch.Tensor], torch.Tensor]


def directional_similarity(
    in_img: torch.Tensor,
    out_img: torch.Tensor,
    caption: str,
    edited_caption: str,
    emb,
) -> float:
    """cos(image delta, text delta) in the embedder's shared space; 0 if either delta vanishes."""
    image_delta = emb.embed_image(out_img) - emb.embed_image(in_img)
    text_delta = (emb.embed_text(edited_caption) - emb.embed_text(caption)).to(image_delta)
    if image_delta.shape[-1] != text_delta.shape[-1]:
        raise GridDimensionError(
            f"Image embedding dimension {image_delta.shape[-1]} differs from text dimension {text_delta.shape[-1]}"
        )
    return float(safe_cosine(image_delta.detach().double(), text_delta.detach().double()))


def feature_statistics(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise RangeError(f"Need at least two feature vectors, got shape {features.shape}")
    return features.mean(axis=0), np.cov(features, rowvar=False)


def _is_singular(sigma: np.ndarray) -> bool:
    eigenvalues = linalg.eigvalsh(sigma)
    return eigenvalues.min() <= 1e-12 * max(eigenvalues.max(), 1.0)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = linalg.eigh((matrix + matrix.T) / 2)
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def frechet_distance(mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + tr(sigma_a + sigma_b - 2 (sigma_a sigma_b)^(1/2)).

    The trace of the product root is taken from the eigenvalues of the symmetric
    ``sqrt(sigma_a) sigma_b sqrt(sigma_a)``, clipped at zero.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    sigma_a, sigma_b = np.atleast_2d(sigma_a), np.atleast_2d(sigma_b)
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise GridDimensionError("Feature statistics have different dimensions")
    if _is_singular(sigma_a) or _is_singular(sigma_b):
        logging.warning(f"Singular feature covariance, adding {RIDGE} to the diagonal")
        ridge = RIDGE * np.eye(sigma_a.shape[0])
        sigma_a, sigma_b = sigma_a + ridge, sigma_b + ridge

    sqrt_a = _psd_sqrt(sigma_a)
    product = sqrt_a @ sigma_b @ sqrt_a
    eigenvalues = linalg.eigvalsh((product + product.T) / 2)
    trace_root = np.sqrt(np.clip(eigenvalues, 0.0, None)).sum()

    diff = mu_a - mu_b
    distance = diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * trace_root
    return float(max(distance, 0.0))


def feature_distance(set_a: torch.Tensor | list[torch.Tensor], set_b: torch.Tensor | list[torch.Tensor], emb) -> float:
    """Fréchet distance between the embedder features of two image sets."""
    stack = lambda images: images if isinstance(images, torch.Tensor) else torch.stack(list(images))
    with torch.no_grad():
        features_a = emb.embed_image(stack(set_a)).double().cpu().numpy()
        features_b = emb.embed_image(stack(set_b)).double().cpu().numpy()
    return frechet_distance(*feature_statistics(features_a), *feature_statistics(features_b))


def masked_error(generated_grid: torch.Tensor, truth_grid: torch.Tensor, mask: torch.Tensor) -> float:
    """Mean squared error over the masked pixels of the generated quadrant."""
    h, w = truth_grid.shape[-3] // 2, truth_grid.shape[-2] // 2
    quadrant_mask = mask[..., h:, w:]
    if float(quadrant_mask.sum()) == 0.0:
        return 0.0
    error = selective_area_loss(
        decompose(generated_grid)[3], decompose(truth_grid)[3], quadrant_mask, normalize_by_mask=True
    )
    return float(error)


class RecordScore(BaseModel):
    record_id: str
    group_id: str
    directional_similarity: float = Field(ge=-1.0, le=1.0)
    masked_error: float


class EvalReport(BaseModel):
    split: Split
    checkpoint: str | None = None
    directional_similarity: float = Field(ge=-1.0, le=1.0)
    feature_distance: float = Field(ge=0.0)
    masked_error: float
    records: list[RecordScore]

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.model_dump_json(indent=2))
        return path


def evaluate_split(
    manifest: ManifestRepository,
    records: list[ManifestRecord],
    label: Split,
    editor: GridEditor,
    providers: Providers,
    selected: list[str],
    dtype: torch.dtype = torch.float32,
    checkpoint: str | None = None,
    progress: bool = True,
) -> EvalReport:
    """Edit every record's conditioning grid and score the generated query outputs."""
    if not records:
        raise RangeError(f"Split '{label.value}' has no records to evaluate")
    manifest.check_disjoint(records, label)

    scores, generated, truths = [], [], []
    for record in tqdm(records, desc=f"evaluate {label.value}", disable=not progress):
        truth_grid, cond_grid = manifest.load_grids(record, dtype)
        output = editor(record, cond_grid)
        if output.shape != truth_grid.shape:
            raise GridDimensionError(f"Editor returned {tuple(output.shape)} for grid {tuple(truth_grid.shape)}")
        query = manifest.query_pair(record)
        query_in, query_out = decompose(output)[2], decompose(output)[3]
        similarity = directional_similarity(query_in, query_out, query.caption, query.edited_caption, providers.embedder)
        mask = build_mask(truth_grid, providers.segmenter, providers.unifier, selected).mask
        scores.append(RecordScore(
            record_id=record.record_id, group_id=record.group_id,
            directional_similarity=similarity, masked_error=masked_error(output, truth_grid, mask),
        ))
        generated.append(query_out)
        truths.append(decompose(truth_grid)[3])

    if len(records) > 1:
        distance = feature_distance(generated, truths, providers.embedder)
    else:
        logging.warning("A single record has no feature covariance, reporting feature distance 0")
        distance = 0.0
    report = EvalReport(
        split=label,
        checkpoint=checkpoint,
        directional_similarity=float(np.mean([score.directional_similarity for score in scores])),
        feature_distance=distance,
        masked_error=float(np.mean([score.masked_error for score in scores])),
        records=scores,
    )
    logging.info(
        f"Evaluated {len(scores)} {label.value} records: directional similarity "
        f"{report.directional_similarity:.4f}, feature distance {report.feature_distance:.4f}, "
        f"masked error {report.masked_error:.5f}"
    )
    return report
