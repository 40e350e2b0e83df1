import random

import pytest
import torch

from model.errors import ProviderError, RangeError
from model.image_grid import compose
from model.providers import (
    ADAPTERS,
    CATEGORY_TABLE,
    CLASS_TABLE,
    CachingUnifier,
    MockEmbedder,
    MockSegmenter,
    MockUnifier,
    PARAPHRASE_GROUPS,
    build_providers,
    register_adapter,
    resolve_provider,
)


def test_mock_embedder_image_features() -> None:
    emb = MockEmbedder(3)
    image = torch.rand(2, 8, 8, 3, dtype=torch.float64, requires_grad=True)

    features = emb.embed_image(image)
    features.sum().backward()

    assert emb.dim == 24
    assert features.shape == (2, 24)
    assert torch.isfinite(image.grad).all()


def test_mock_embedder_constant_image() -> None:
    emb = MockEmbedder(3)
    features = emb.embed_image(torch.full((4, 4, 3), 0.25, dtype=torch.float64))

    means = features.reshape(4, 2, 3)[:, 0]
    spreads = features.reshape(4, 2, 3)[:, 1]
    assert torch.allclose(means, torch.full_like(means, 0.25))
    assert torch.all(spreads < 1e-5)


def test_mock_text_embedding_lexicon() -> None:
    emb = MockEmbedder(3)

    assert torch.count_nonzero(emb.embed_text("")) == 0
    assert torch.count_nonzero(emb.embed_text("the at on a")) == 0
    assert torch.equal(emb.embed_text("a red circle"), emb.embed_text("A red circle"))
    delta = emb.embed_text("blue") - emb.embed_text("red")
    assert delta.shape == (24,)
    assert delta[2] > 0 and delta[0] < 0
    assert torch.equal(emb.embed_text("circle"), emb.embed_text("circle"))


def test_mock_segmenter_bins() -> None:
    seg = MockSegmenter()
    red = torch.tensor([0.9, 0.1, 0.1])
    grey = torch.tensor([0.5, 0.5, 0.5])
    image = grey.expand(4, 4, 3).clone()
    image[:2, :2] = red

    labels, classes = seg.segment(image)

    assert labels.shape == (4, 4)
    assert dict(classes) == {0: "background", 1: "person"}
    assert torch.all(labels[:2, :2] == 1) and labels[3, 3] == 0
    assert all(CLASS_TABLE[class_id] == name for class_id, name in classes)


@pytest.mark.parametrize("group", PARAPHRASE_GROUPS)
def test_paraphrases_unify_to_one_instruction(group) -> None:
    uni = MockUnifier()
    unified = {uni.unify(text) for text in group}

    assert len(unified) == 1
    canonical = unified.pop()
    assert uni.unify(canonical) == canonical


@pytest.mark.parametrize("text", ["", "   ", "!!!", " . ? ", "\t!\n"])
def test_unify_rejects_instructions_without_words(text) -> None:
    with pytest.raises(RangeError):
        MockUnifier().unify(text)


VOCABULARY = (
    "please", "can you", "make", "turn", "paint", "change", "replace", "move", "shift", "the", "dog",
    "circle", "square", "a", "cat", "into", "with", "to", "blue", "big", "colour", "Gray", "bigger",
    "smaller", "left", ".", "!", "?", ",", "  ", "\t",
)


def _instructions(count: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    texts = ["make the dog a cat. !", "Paint the circle blue ?!.", "please please please kindly enlarge the square..."]
    for _ in range(count):
        words = [rng.choice(VOCABULARY) for _ in range(rng.randint(1, 9))]
        tail = "".join(rng.choice(" .!?") for _ in range(rng.randint(0, 4)))
        texts.append(" ".join(words) + tail)
    return texts


@pytest.mark.parametrize("seed", range(4))
def test_unify_is_idempotent(seed) -> None:
    uni = MockUnifier()
    for text in _instructions(200, seed):
        try:
            unified = uni.unify(text)
        except RangeError:
            continue
        assert unified
        assert uni.unify(unified) == unified, text


def test_unify_strips_stacked_trailing_punctuation() -> None:
    uni = MockUnifier()
    assert uni.unify("make the dog a cat. !") == "change the dog to a cat"
    assert uni.unify("Paint the circle blue ?!.") == "change the circle to blue"


def test_filter_classes_expands_categories() -> None:
    uni = MockUnifier()
    names = ["background", "person", "sky", "animal", "face"]

    assert uni.filter_classes(names, ["living"]) == ["person", "animal", "face"]
    assert uni.filter_classes(names, ["sky"]) == ["sky"]
    assert uni.filter_classes(names, []) == []
    assert CATEGORY_TABLE["living"] == {"person", "face", "animal"}


class CountingUnifier(MockUnifier):
    def __init__(self) -> None:
        self.calls = 0

    def unify(self, instruction: str) -> str:
        self.calls += 1
        return super().unify(instruction)


def test_caching_unifier_memoizes_and_is_idempotent() -> None:
    inner = CountingUnifier()
    uni = CachingUnifier(inner)

    first = uni.unify("Make the circle blue.")
    again = uni.unify("Make the circle blue.")

    assert first == again == "change the circle to blue"
    assert uni.unify(first) == first
    assert inner.calls == 1


def test_caching_unifier_replaces_stale_entries() -> None:
    uni = CachingUnifier(MockUnifier(), known={"change the circle to blue": "stale"})

    assert uni.unify("paint the circle blue") == "change the circle to blue"
    assert uni.unify("change the circle to blue") == "change the circle to blue"


def test_resolve_mock_providers(tiny_config) -> None:
    providers = build_providers(tiny_config)

    assert isinstance(providers.embedder, MockEmbedder)
    assert isinstance(providers.segmenter, MockSegmenter)
    assert isinstance(providers.unifier, CachingUnifier)
    assert resolve_provider("promptgen", "mock", tiny_config).generate(0).instruction


def test_unknown_provider_selection(tiny_config) -> None:
    with pytest.raises(ProviderError):
        resolve_provider("embedder", "clip", tiny_config)
    with pytest.raises(ProviderError):
        resolve_provider("segmenter", "external:nothing-registered", tiny_config)


def test_registered_adapter_is_resolved(tiny_config) -> None:
    @register_adapter("embedder", "wide-mock")
    def wide_mock(cfg):
        return MockEmbedder(cfg.channels)

    try:
        assert isinstance(resolve_provider("embedder", "external:wide-mock", tiny_config), MockEmbedder)
    finally:
        ADAPTERS.pop(("embedder", "wide-mock"))


def test_mock_grid_embedding_covers_all_quadrants() -> None:
    emb = MockEmbedder(3)
    quadrants = [torch.full((2, 2, 3), value, dtype=torch.float64) for value in (0.1, 0.2, 0.3, 0.4)]

    features = emb.embed_image(compose(*quadrants)).reshape(4, 2, 3)[:, 0, 0]

    assert torch.allclose(features, torch.tensor([0.1, 0.2, 0.3, 0.4], dtype=torch.float64))
