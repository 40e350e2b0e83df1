"""Seeded instruction-group generator over the procedural scene vocabulary."""
import random

from model.Manifest import CaptionPair, GroupDraft
from model.providers import BACKGROUNDS, COLORS, PromptGenerator

SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "large")
POSITIONS = ("left", "right", "top", "bottom", "center")
PAIRS_PER_GROUP = 5

# edit kind -> paraphrase templates of its instruction
TEMPLATES: dict[str, tuple[str, ...]] = {
    "recolor": (
        "change the {shape} to {target}",
        "make the {shape} {target}",
        "Paint the {shape} {target}.",
        "turn the {shape} {target}",
    ),
    "reshape": (
        "turn the {shape} into a {target}",
        "Change the {shape} into a {target}!",
        "replace the {shape} with a {target}",
    ),
    "enlarge": (
        "make the {shape} larger",
        "Make the {shape} bigger.",
        "enlarge the {shape}",
        "increase the size of the {shape}",
    ),
    "shrink": (
        "shrink the {shape}",
        "make the {shape} smaller",
        "Reduce the size of the {shape}.",
    ),
    "move": (
        "move the {shape} to the {target}",
        "shift the {shape} to the {target}",
        "Put the {shape} on the {target}",
        "slide the {shape} to the {target}",
    ),
    "background": (
        "change the background to {target}",
        "make the background {target}",
        "Turn the background {target}.",
    ),
}


def caption(size: str, color: str, shape: str, position: str, background: str) -> str:
    return f"a {size} {color} {shape} at the {position} on a {background} background"


class MockPromptGenerator(PromptGenerator):
    """One edit kind per group; five random scenes the edit actually changes."""

    def generate(self, seed: int) -> GroupDraft:
        rng = random.Random(seed)
        kind = rng.choice(sorted(TEMPLATES))
        shape = rng.choice(SHAPES)
        target = {
            "recolor": lambda: rng.choice(sorted(COLORS)),
            "reshape": lambda: rng.choice([s for s in SHAPES if s != shape]),
            "move": lambda: rng.choice(POSITIONS),
            "background": lambda: rng.choice(sorted(BACKGROUNDS)),
        }.get(kind, lambda: "")()
        instruction = rng.choice(TEMPLATES[kind]).format(shape=shape, target=target)

        pairs = []
        for _ in range(PAIRS_PER_GROUP):
            size = "large" if kind == "shrink" else "small" if kind == "enlarge" else rng.choice(SIZES)
            color = rng.choice([c for c in sorted(COLORS) if not (kind == "recolor" and c == target)])
            position = rng.choice([p for p in POSITIONS if not (kind == "move" and p == target)])
            background = rng.choice([b for b in sorted(BACKGROUNDS) if not (kind == "background" and b == target)])
            scene = dict(size=size, color=color, shape=shape, position=position, background=background)
            edited = dict(scene)
            if kind == "recolor":
                edited["color"] = target
            elif kind == "reshape":
                edited["shape"] = target
            elif kind == "enlarge":
                edited["size"] = "large"
            elif kind == "shrink":
                edited["size"] = "small"
            elif kind == "move":
                edited["position"] = target
            else:
                edited["background"] = target
            pairs.append(CaptionPair(caption=caption(**scene), edited_caption=caption(**edited)))
        return GroupDraft(instruction=instruction, caption_pairs=pairs)
