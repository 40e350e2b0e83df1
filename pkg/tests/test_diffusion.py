import math

import pytest
import torch

from model.denoiser import build_denoiser
from model.diffusion import (
    NoiseSchedule,
    PooledLatent,
    forward_noise,
    predict_noise,
    reconstruct_x0,
    sample,
    sampling_timesteps,
)
from model.errors import GridDimensionError, RangeError, ReconstructionError, ScheduleError
from model.image_grid import compose, decompose, mask_query


def test_cosine_schedule_endpoints_and_monotonicity() -> None:
    sched = NoiseSchedule.cosine(50)

    assert sched.T == 50
    assert sched.alpha(0) == 1.0 and sched.alpha(50) == 0.0
    assert all(later < earlier for earlier, later in zip(sched.alphas, sched.alphas[1:]))


@pytest.mark.parametrize("alphas", [(1.0, 0.5, 0.5, 0.0), (0.9, 0.5, 0.0), (1.0, 0.5, 0.1), (1.0,)])
def test_invalid_schedules_are_rejected(alphas) -> None:
    with pytest.raises(ScheduleError):
        NoiseSchedule(alphas)


def test_alpha_outside_range() -> None:
    with pytest.raises(RangeError):
        NoiseSchedule.linear(10).alpha(11)


def test_forward_then_reconstruct_is_identity() -> None:
    sched = NoiseSchedule.cosine(50)
    generator = torch.Generator().manual_seed(0)
    x0 = torch.rand(8, 8, 3, generator=generator, dtype=torch.float64)
    eps = torch.randn(8, 8, 3, generator=generator, dtype=torch.float64)

    for t in range(0, 50):
        x_t = forward_noise(x0, t, eps, sched)
        assert torch.allclose(reconstruct_x0(x_t, eps, t, sched), x0, atol=1e-9, rtol=0)


def test_batched_timesteps_match_scalar() -> None:
    sched = NoiseSchedule.cosine(20)
    x0 = torch.rand(3, 4, 4, 3, dtype=torch.float64)
    eps = torch.randn(3, 4, 4, 3, dtype=torch.float64)
    t = torch.tensor([1, 7, 19])

    batched = forward_noise(x0, t, eps, sched)
    for index in range(3):
        assert torch.allclose(batched[index], forward_noise(x0[index], int(t[index]), eps[index], sched))


def test_reconstruct_at_full_noise_raises() -> None:
    sched = NoiseSchedule.cosine(10)
    with pytest.raises(ReconstructionError):
        reconstruct_x0(torch.zeros(2, 2, 1), torch.zeros(2, 2, 1), 10, sched)


def test_forward_noise_shape_mismatch() -> None:
    with pytest.raises(GridDimensionError):
        forward_noise(torch.zeros(2, 2, 3), 1, torch.zeros(2, 2, 1), NoiseSchedule.cosine(10))


def test_forward_noise_second_moment() -> None:
    sched = NoiseSchedule.cosine(50)
    generator = torch.Generator().manual_seed(5)
    x0 = torch.rand(8, 8, 3, generator=generator, dtype=torch.float64)
    t = 20
    alpha = sched.alpha(t)
    draws = 2000

    eps = torch.randn(draws, 8, 8, 3, generator=generator, dtype=torch.float64)
    x_t = forward_noise(x0.expand(draws, -1, -1, -1), t, eps, sched)
    empirical = x_t.pow(2).sum(dim=(1, 2, 3)).mean().item()
    expected = alpha * x0.pow(2).sum().item() + (1 - alpha) * x0.numel()

    assert abs(empirical - expected) / expected < 0.05


def test_sampling_timesteps_descend_inside_training_range() -> None:
    steps = sampling_timesteps(50, 20)

    assert len(steps) == 20
    assert steps[0] == 49 and steps[-1] == 1
    assert all(later < earlier for earlier, later in zip(steps, steps[1:]))
    assert sampling_timesteps(10, 10) == list(range(9, 0, -1))


def test_pooled_latent_shapes() -> None:
    codec = PooledLatent()
    grid = torch.rand(2, 8, 8, 3)

    latent = codec.encode(grid)
    assert latent.shape == (2, 4, 4, 3)
    assert codec.decode(latent).shape == grid.shape
    assert torch.allclose(codec.encode(codec.decode(latent)), latent)


def _cond_grid(size: int = 8) -> torch.Tensor:
    generator = torch.Generator().manual_seed(2)
    images = [torch.rand(size, size, 3, generator=generator, dtype=torch.float64) for _ in range(4)]
    return mask_query(compose(*images))


def test_predict_noise_shape(tiny_config) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    x_t = torch.randn(16, 16, 3, dtype=torch.float64)
    eps = predict_noise(state, x_t, 3, torch.zeros(24, dtype=torch.float64), _cond_grid())

    assert eps.shape == x_t.shape


def test_sample_is_deterministic_and_keeps_known_quadrants(tiny_config) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    cond = _cond_grid()
    text = torch.randn(24, dtype=torch.float64)

    first = sample(state, cond, text, guidance_scale=2.0, steps=4, seed=11)
    second = sample(state, cond, text, guidance_scale=2.0, steps=4, seed=11)
    other = sample(state, cond, text, guidance_scale=2.0, steps=4, seed=12)

    assert first.shape == cond.shape
    assert torch.equal(first, second)
    assert not torch.equal(first, other)
    for known, original in zip(decompose(first)[:3], decompose(cond)[:3]):
        assert torch.equal(known, original)
    assert first.min() >= 0 and first.max() <= 1


@pytest.mark.parametrize("scale", [0.0, 2.0, 7.5])
def test_guidance_with_matching_branches_is_unguided(scale, tiny_config) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    cond = _cond_grid()
    text = torch.randn(24, dtype=torch.float64)

    unguided = sample(state, cond, text, guidance_scale=1.0, steps=4, seed=3)
    guided = sample(state, cond, text, guidance_scale=scale, steps=4, seed=3, uncond_embed=text)

    assert torch.equal(guided, unguided)


def test_zero_guidance_follows_unconditional_branch(tiny_config) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    cond = _cond_grid()
    text = torch.randn(24, dtype=torch.float64)
    uncond = torch.zeros(24, dtype=torch.float64)

    guided = sample(state, cond, text, guidance_scale=0.0, steps=4, seed=3, uncond_embed=uncond)
    unguided = sample(state, cond, uncond, guidance_scale=1.0, steps=4, seed=3)

    assert torch.equal(guided, unguided)


def test_sample_without_posterior_noise(tiny_config) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    out = sample(state, _cond_grid(), torch.zeros(24, dtype=torch.float64), steps=3, seed=0, stochastic=False)
    assert torch.isfinite(out).all()


@pytest.mark.parametrize("steps", [0, 11])
def test_sample_rejects_bad_step_counts(tiny_config, steps) -> None:
    state = build_denoiser(tiny_config, text_dim=24)
    with pytest.raises(RangeError):
        sample(state, _cond_grid(), torch.zeros(24, dtype=torch.float64), steps=steps)


def test_cosine_alpha_values() -> None:
    sched = NoiseSchedule.cosine(50)
    offset = 0.008
    expected = math.cos((25 / 50 + offset) / (1 + offset) * math.pi / 2) ** 2 / math.cos(
        offset / (1 + offset) * math.pi / 2
    ) ** 2
    assert sched.alpha(25) == pytest.approx(expected, abs=1e-15)
