"""Embedder, segmenter, instruction unifier and prompt-generator interfaces.

The mock implementations are deterministic desk-scale stand-ins. The mock embedder
describes an image by per-channel mean and spread over its four quadrants, and embeds
text into that same space through a small lexicon, so image deltas and caption deltas
can be compared directly.
"""
import hashlib
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import torch

from .errors import ProviderError, RangeError
from .image_grid import decompose

STD_EPS = 1e-12

# colour name -> RGB, shared by the text lexicon and the procedural renderer
COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.1, 0.1, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "purple": (0.6, 0.1, 0.8),
    "orange": (0.95, 0.5, 0.05),
}
BACKGROUNDS: dict[str, tuple[float, float, float]] = {
    "grey": (0.5, 0.5, 0.5),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "beige": (0.8, 0.75, 0.65),
}
SIZE_WORDS = {"large": 1.0, "larger": 1.0, "big": 1.0, "bigger": 1.0, "small": -1.0, "smaller": -1.0}
POSITION_WORDS = {"left": (0, 2), "right": (1, 3), "top": (0, 1), "bottom": (2, 3)}
STOPWORDS = {"a", "an", "the", "at", "on", "of", "to", "in", "into", "with", "and", "background"}

# mock segmenter bins: (dominant channel, bright?) -> class id
CLASS_TABLE: dict[int, str] = {
    0: "background",
    1: "person",
    2: "animal",
    3: "sky",
    4: "face",
    5: "plant",
    6: "water",
}
CATEGORY_TABLE: dict[str, frozenset[str]] = {
    "living": frozenset({"person", "face", "animal"}),
    "human": frozenset({"person", "face"}),
    "creature": frozenset({"animal"}),
}
SATURATION_FLOOR = 0.25
BRIGHTNESS_SPLIT = 0.6


class Embedder(ABC):
    dim: int

    @abstractmethod
    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        """``(..., H, W, C)`` -> ``(..., dim)``; differentiable."""

    @abstractmethod
    def embed_text(self, text: str) -> torch.Tensor:
        """String -> ``(dim,)`` float64 vector."""

    def embed_texts(self, texts: list[str], dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.stack([self.embed_text(text) for text in texts]).to(dtype)


class Segmenter(ABC):
    @abstractmethod
    def segment(self, image: torch.Tensor) -> tuple[torch.Tensor, list[tuple[int, str]]]:
        """Returns an ``(H, W)`` integer label map and its ``(id, class_name)`` table."""


class InstructionUnifier(ABC):
    @abstractmethod
    def unify(self, instruction: str) -> str:
        ...

    @abstractmethod
    def filter_classes(self, class_names: list[str], selected: list[str]) -> list[str]:
        ...


class PromptGenerator(ABC):
    @abstractmethod
    def generate(self, seed: int):
        """Returns a ``GroupDraft`` (one instruction, five caption pairs)."""


class MockEmbedder(Embedder):
    def __init__(self, channels: int = 3) -> None:
        self.channels = channels
        self.dim = 2 * channels * 4

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        stats = []
        for quadrant in decompose(image):
            flat = quadrant.flatten(-3, -2)
            mean = flat.mean(dim=-2)
            std = torch.sqrt(flat.var(dim=-2, correction=0) + STD_EPS)
            stats.append(torch.cat([mean, std], dim=-1))
        return torch.cat(stats, dim=-1)

    def _slot(self, quadrant: int, spread: bool) -> slice:
        start = quadrant * 2 * self.channels + (self.channels if spread else 0)
        return slice(start, start + self.channels)

    def _token_vector(self, token: str) -> torch.Tensor:
        vector = torch.zeros(self.dim, dtype=torch.float64)
        palette = COLORS | BACKGROUNDS
        if token in palette:
            rgb = torch.tensor(palette[token][: self.channels], dtype=torch.float64)
            for quadrant in range(4):
                vector[self._slot(quadrant, spread=False)] = rgb
        elif token in SIZE_WORDS:
            for quadrant in range(4):
                vector[self._slot(quadrant, spread=True)] = 0.2 * SIZE_WORDS[token]
        elif token in POSITION_WORDS:
            for quadrant in POSITION_WORDS[token]:
                vector[self._slot(quadrant, spread=True)] = 0.2
        elif token not in STOPWORDS:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            generator = torch.Generator().manual_seed(int.from_bytes(digest[:8], "little"))
            vector = 0.1 * torch.randn(self.dim, generator=generator, dtype=torch.float64)
        return vector

    def embed_text(self, text: str) -> torch.Tensor:
        vector = torch.zeros(self.dim, dtype=torch.float64)
        for token in re.findall(r"[a-z]+", text.lower()):
            vector = vector + self._token_vector(token)
        return vector


class MockSegmenter(Segmenter):
    """Colour-quantization segmentation into the fixed ``CLASS_TABLE`` bins."""

    def segment(self, image: torch.Tensor) -> tuple[torch.Tensor, list[tuple[int, str]]]:
        data = image.detach()
        top, dominant = data.max(dim=-1)
        saturation = top - data.min(dim=-1).values
        bright = top >= BRIGHTNESS_SPLIT
        # dominant channel r/g/b -> (bright id, dark id)
        bright_ids = torch.tensor([1, 2, 3], device=data.device)
        dark_ids = torch.tensor([4, 5, 6], device=data.device)
        dominant = dominant.clamp(max=2)
        labels = torch.where(bright, bright_ids[dominant], dark_ids[dominant])
        labels = torch.where(saturation < SATURATION_FLOOR, torch.zeros_like(labels), labels).long()
        present = sorted(int(label) for label in labels.unique())
        return labels, [(label, CLASS_TABLE[label]) for label in present]


class MockUnifier(InstructionUnifier):
    """Rule-table canonicalization applied until nothing changes."""

    _palette = "|".join(sorted(COLORS | BACKGROUNDS))
    RULES: tuple[tuple[re.Pattern, str], ...] = tuple(
        (re.compile(pattern), replacement)
        for pattern, replacement in (
            (r"^(?:(?:please|can you|could you|kindly) )+", ""),
            (r"^(?:alter|modify|switch|swap) ", "change "),
            (r"^(?:turn|transform|convert|change) (.+?) into (.+)$", r"change \1 to \2"),
            (r"^replace (.+?) with (.+)$", r"change \1 to \2"),
            (r"^(?:make|turn|paint|recolor|color) (the \w+) (an?) (.+)$", r"change \1 to \2 \3"),
            (rf"^(?:make|turn|paint|recolor|color) (the \w+) ({_palette})$", r"change \1 to \2"),
            (r"^(?:make|render) (the \w+) (?:bigger|larger)$", r"enlarge \1"),
            (r"^increase the size of (the \w+)$", r"enlarge \1"),
            (r"^(?:make|render) (the \w+) smaller$", r"shrink \1"),
            (r"^(?:reduce|decrease) the size of (the \w+)$", r"shrink \1"),
            (r"^(?:shift|slide|put|place|move) (the \w+) (?:to|on|at|towards) the (left|right|top|bottom|center)$", r"move \1 to the \2"),
        )
    )
    WORDS = {"colour": "color", "gray": "grey", "big": "large"}
    MAX_PASSES = 16

    def normalize(self, instruction: str) -> str:
        text = instruction.strip().lower()
        text = re.sub(r"[\s.!?]+$", "", text)
        text = re.sub(r"\s+", " ", text)
        return " ".join(self.WORDS.get(word, word) for word in text.split(" "))

    def unify(self, instruction: str) -> str:
        text = self.normalize(instruction or "")
        if not text:
            raise RangeError(f"Instruction must contain words, got {instruction!r}")
        for _ in range(self.MAX_PASSES):
            rewritten = text
            for pattern, replacement in self.RULES:
                rewritten = pattern.sub(replacement, rewritten)
            if rewritten == text:
                break
            text = rewritten
        return text

    def filter_classes(self, class_names: list[str], selected: list[str]) -> list[str]:
        wanted: set[str] = set()
        for entry in selected:
            wanted |= CATEGORY_TABLE.get(entry, frozenset({entry}))
        return [name for name in class_names if name in wanted]


# paraphrase classes that unify to the same canonical instruction
PARAPHRASE_GROUPS: tuple[tuple[str, ...], ...] = (
    ("Make the dog a cat.", "turn the dog into a cat", "Change the dog into a cat!", "replace the dog with a cat"),
    ("change the circle to blue", "Make the circle blue.", "paint the circle blue", "turn the circle blue"),
    ("make the square larger", "Make the square bigger", "enlarge the square", "increase the size of the square"),
    ("shrink the triangle", "make the triangle smaller", "Reduce the size of the triangle."),
    ("move the circle to the left", "shift the circle to the left", "Put the circle on the left", "slide the circle to the left"),
    ("change the background to white", "make the background white", "Turn the background white."),
)


class CachingUnifier(InstructionUnifier):
    """Memoizes another unifier; every result also maps to itself."""

    def __init__(self, inner: InstructionUnifier, known: dict[str, str] | None = None) -> None:
        self.inner = inner
        self._cache: dict[str, str] = {}
        self._lock = threading.Lock()
        for raw, unified in (known or {}).items():
            self._remember(raw, unified)

    def _remember(self, raw: str, unified: str) -> None:
        with self._lock:
            self._cache[raw] = unified
            self._cache[unified] = unified

    def unify(self, instruction: str) -> str:
        if instruction in self._cache:
            return self._cache[instruction]
        unified = self.inner.unify(instruction)
        self._remember(instruction, unified)
        return self._cache[instruction]

    def filter_classes(self, class_names: list[str], selected: list[str]) -> list[str]:
        return self.inner.filter_classes(class_names, selected)


@dataclass
class Providers:
    embedder: Embedder
    segmenter: Segmenter
    unifier: InstructionUnifier


ADAPTERS: dict[tuple[str, str], Callable[..., object]] = {}


def register_adapter(kind: str, name: str) -> Callable:
    def decorator(factory: Callable) -> Callable:
        ADAPTERS[(kind, name)] = factory
        return factory

    return decorator


def resolve_provider(kind: str, selection: str, cfg) -> object:
    """``mock`` or ``external:<adapter-name>`` for one of embedder/segmenter/unifier/promptgen."""
    if selection == "mock":
        if kind == "embedder":
            return MockEmbedder(cfg.channels)
        if kind == "segmenter":
            return MockSegmenter()
        if kind == "unifier":
            return MockUnifier()
        if kind == "promptgen":
            from dataset.promptgen import MockPromptGenerator

            return MockPromptGenerator()
    elif selection.startswith("external:"):
        name = selection.split(":", 1)[1]
        if (kind, name) not in ADAPTERS:
            # adapters register themselves on import
            from . import prompt  # noqa: F401
        factory = ADAPTERS.get((kind, name))
        if factory is not None:
            return factory(cfg)
        raise ProviderError(f"No external {kind} adapter named '{name}'")
    raise ProviderError(f"Unknown {kind} selection '{selection}'")


def build_providers(cfg) -> Providers:
    unifier = resolve_provider("unifier", cfg.unifier, cfg)
    return Providers(
        embedder=resolve_provider("embedder", cfg.embedder, cfg),
        segmenter=resolve_provider("segmenter", cfg.segmenter, cfg),
        unifier=unifier if isinstance(unifier, CachingUnifier) else CachingUnifier(unifier),
    )
