"""Editing-shift value of a grid and the cosine matching loss built on it."""
import torch

from .diffusion import LatentSample, NoiseSchedule, reconstruct_x0
from .errors import GridDimensionError
from .image_grid import decompose
from .providers import Embedder

NORM_EPS = 1e-8

ShiftVector = torch.Tensor


def _norm(vector: torch.Tensor) -> torch.Tensor:
    # clamped so the backward pass stays finite at the zero vector
    return vector.pow(2).sum(dim=-1).clamp_min(NORM_EPS**2).sqrt()


def _is_degenerate(vector: torch.Tensor) -> torch.Tensor:
    return vector.detach().pow(2).sum(dim=-1) < NORM_EPS**2


def safe_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; 0 where either vector is (near) zero."""
    if a.shape[-1] != b.shape[-1]:
        raise GridDimensionError(f"Vector dimensions differ: {a.shape[-1]} vs {b.shape[-1]}")
    cosine = ((a * b).sum(dim=-1) / (_norm(a) * _norm(b))).clamp(-1.0, 1.0)
    degenerate = _is_degenerate(a) | _is_degenerate(b)
    return torch.where(degenerate, torch.zeros_like(cosine), cosine)


def editing_shift(quadrants: tuple[torch.Tensor, ...], emb: Embedder) -> ShiftVector:
    """Half the summed in-minus-out embedding over the grid's two pairs."""
    in_0, out_0, in_1, out_1 = quadrants
    first = emb.embed_image(in_0) - emb.embed_image(out_0)
    second = emb.embed_image(in_1) - emb.embed_image(out_1)
    if first.shape[-1] != emb.dim:
        raise GridDimensionError(f"Embedder returned dimension {first.shape[-1]}, declared {emb.dim}")
    return (first + second) / 2


def editing_shift_loss(pseudo: ShiftVector, truth: ShiftVector) -> torch.Tensor:
    """1 - cos(pseudo, truth), in [0, 2].

    Degenerate directions: 0 when both vectors are (near) zero, 1 when only one is.
    """
    loss = 1.0 - safe_cosine(pseudo, truth)
    both = _is_degenerate(pseudo) & _is_degenerate(truth)
    return torch.where(both, torch.zeros_like(loss), loss)


def pseudo_output(predicted_eps: torch.Tensor, latent_sample: LatentSample, sched: NoiseSchedule, latent=None) -> torch.Tensor:
    """x0 estimate from the predicted noise, decoded to pixels and clamped to [0, 1]."""
    x0 = reconstruct_x0(latent_sample.x_t, predicted_eps, latent_sample.t, sched)
    if latent is not None:
        x0 = latent.decode(x0)
    return x0.clamp(0, 1)


def training_shift_loss(
    predicted_eps: torch.Tensor,
    latent_sample: LatentSample,
    truth_grid: torch.Tensor,
    sched: NoiseSchedule,
    emb: Embedder,
    latent=None,
) -> torch.Tensor:
    """Editing-shift loss of the pseudo output recovered from the predicted noise."""
    pseudo = pseudo_output(predicted_eps, latent_sample, sched, latent)
    pseudo_shift = editing_shift(decompose(pseudo), emb)
    truth_shift = editing_shift(decompose(truth_grid), emb)
    return editing_shift_loss(pseudo_shift, truth_shift).mean()
