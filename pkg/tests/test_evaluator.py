import logging
import math

import numpy as np
import pytest
import torch

from model import Split
from model.errors import GridDimensionError, ProtocolError, RangeError
from model.evaluator import directional_similarity, evaluate_split, feature_distance, frechet_distance, masked_error
from model.providers import Embedder, MockEmbedder


class PlaneEmbedder(Embedder):
    """Images are their own 2-d features; captions are looked up."""

    def __init__(self, texts: dict[str, list[float]]) -> None:
        self.texts = texts

    @property
    def dim(self) -> int:
        return 2

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        return image.double()

    def embed_text(self, text: str) -> torch.Tensor:
        return torch.tensor(self.texts[text], dtype=torch.float64)


def test_directional_similarity_oracles() -> None:
    emb = PlaneEmbedder({"in": [0.0, 0.0], "diag": [1.0, 1.0], "right": [2.0, 0.0]})
    origin, right = torch.tensor([0.0, 0.0]), torch.tensor([1.0, 0.0])

    assert abs(directional_similarity(origin, right, "in", "diag", emb) - 1 / math.sqrt(2)) < 1e-9
    assert abs(directional_similarity(origin, right, "in", "right", emb) - 1.0) < 1e-12
    assert abs(directional_similarity(right, origin, "in", "right", emb) + 1.0) < 1e-12
    assert directional_similarity(origin, origin, "in", "right", emb) == 0.0
    assert directional_similarity(origin, right, "in", "in", emb) == 0.0


def test_directional_similarity_dimension_mismatch() -> None:
    emb = PlaneEmbedder({"a": [0.0, 0.0, 0.0], "b": [1.0, 0.0, 0.0]})
    with pytest.raises(GridDimensionError):
        directional_similarity(torch.zeros(2), torch.ones(2), "a", "b", emb)


def test_frechet_of_identical_statistics_is_zero() -> None:
    rng = np.random.default_rng(0)
    features = rng.normal(size=(50, 4))
    mu, sigma = features.mean(axis=0), np.cov(features, rowvar=False)

    assert frechet_distance(mu, sigma, mu, sigma) == pytest.approx(0.0, abs=1e-8)


def test_frechet_is_symmetric() -> None:
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(40, 3)), 2.0 + 0.5 * rng.normal(size=(40, 3))
    stats_a = a.mean(axis=0), np.cov(a, rowvar=False)
    stats_b = b.mean(axis=0), np.cov(b, rowvar=False)

    assert frechet_distance(*stats_a, *stats_b) == pytest.approx(frechet_distance(*stats_b, *stats_a), rel=1e-9)


@pytest.mark.parametrize("mu_b,sigma_a,sigma_b,expected", [
    ([1.0, 2.0], np.eye(2), 4 * np.eye(2), 7.0),
    ([0.0, 0.0], np.diag([1.0, 4.0]), np.diag([9.0, 1.0]), 5.0),
    ([3.0, 4.0], np.eye(2), np.eye(2), 25.0),
])
def test_frechet_closed_forms(mu_b, sigma_a, sigma_b, expected) -> None:
    assert frechet_distance(np.zeros(2), sigma_a, np.array(mu_b), sigma_b) == pytest.approx(expected, abs=1e-9)


def test_singular_covariance_warns(caplog) -> None:
    with caplog.at_level(logging.WARNING):
        distance = frechet_distance(np.zeros(2), np.zeros((2, 2)), np.ones(2), np.zeros((2, 2)))

    assert distance == pytest.approx(2.0, abs=1e-6)
    assert "Singular feature covariance" in caplog.text


def test_frechet_dimension_mismatch() -> None:
    with pytest.raises(GridDimensionError):
        frechet_distance(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


def test_feature_distance_of_identical_sets() -> None:
    images = torch.rand(30, 4, 4, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    assert feature_distance(images, images.clone(), MockEmbedder(3)) == pytest.approx(0.0, abs=1e-6)


def test_feature_distance_needs_two_images() -> None:
    with pytest.raises(RangeError):
        feature_distance(torch.rand(1, 4, 4, 3), torch.rand(1, 4, 4, 3), MockEmbedder(3))


def test_masked_error_uses_generated_quadrant() -> None:
    truth = torch.zeros(4, 4, 3, dtype=torch.float64)
    generated = truth.clone()
    generated[:2, :2] = 1.0
    generated[3, 3] = 0.5
    mask = torch.zeros(4, 4, dtype=torch.float64)
    mask[2:, 2:] = 1.0

    assert masked_error(generated, truth, mask) == pytest.approx(0.25 / 4)
    assert masked_error(generated, truth, torch.zeros(4, 4)) == 0.0


def _ground_truth(manifest):
    return lambda record, cond: manifest.load_grids(record, cond.dtype)[0]


def test_perfect_editor(toy_manifest, providers) -> None:
    records = toy_manifest.split(Split.IN_DOMAIN)
    report = evaluate_split(
        toy_manifest, records, Split.IN_DOMAIN, _ground_truth(toy_manifest), providers,
        ["living"], dtype=torch.float64, progress=False,
    )

    assert len(report.records) == len(records) > 1
    assert report.feature_distance == pytest.approx(0.0, abs=1e-6)
    assert report.masked_error == 0.0
    assert -1.0 <= report.directional_similarity <= 1.0


def test_single_record_reports_zero_distance(toy_manifest, providers) -> None:
    records = toy_manifest.split(Split.OUT_OF_DOMAIN)[:1]
    report = evaluate_split(
        toy_manifest, records, Split.OUT_OF_DOMAIN, _ground_truth(toy_manifest), providers,
        ["living"], dtype=torch.float64, progress=False,
    )
    assert report.feature_distance == 0.0


@pytest.mark.parametrize("label", [Split.OUT_OF_DOMAIN, Split.IN_DOMAIN])
def test_training_records_are_rejected(toy_manifest, providers, label) -> None:
    with pytest.raises(ProtocolError):
        evaluate_split(
            toy_manifest, toy_manifest.split(Split.TRAIN), label, _ground_truth(toy_manifest), providers,
            ["living"], progress=False,
        )


def test_empty_split_is_rejected(toy_manifest, providers) -> None:
    with pytest.raises(RangeError):
        evaluate_split(toy_manifest, [], Split.IN_DOMAIN, _ground_truth(toy_manifest), providers, [], progress=False)


def test_editor_output_shape_is_checked(toy_manifest, providers) -> None:
    records = toy_manifest.split(Split.IN_DOMAIN)
    with pytest.raises(GridDimensionError):
        evaluate_split(
            toy_manifest, records, Split.IN_DOMAIN, lambda record, cond: cond[:4], providers, [], progress=False
        )
