"""Language instruction unification for training batches and for inference."""
import math
import random
from collections import Counter
from dataclasses import dataclass, replace

from .errors import RangeError
from .providers import InstructionUnifier

# how often each path called the unifier; inference must never bypass it
UNIFICATION_CALLS: Counter = Counter()


@dataclass(frozen=True)
class InstructionRecord:
    raw: str
    unified: str | None = None
    used_unified: bool = False

    @property
    def text(self) -> str:
        return self.unified if self.used_unified and self.unified is not None else self.raw


def augment_batch(
    batch: list[InstructionRecord],
    uni: InstructionUnifier,
    rng_seed: int,
    fraction: float = 0.5,
) -> list[InstructionRecord]:
    """Swap in the unified text for a seeded floor(fraction * |batch|) of the records."""
    if not batch:
        raise RangeError("Cannot augment an empty batch")
    if not 0.0 <= fraction <= 1.0:
        raise RangeError(f"Unification fraction {fraction} is outside [0, 1]")
    count = math.floor(len(batch) * fraction)
    chosen = set(random.Random(rng_seed).sample(range(len(batch)), count))
    augmented = []
    for index, record in enumerate(batch):
        if index in chosen:
            UNIFICATION_CALLS["training"] += 1
            record = replace(record, unified=uni.unify(record.raw), used_unified=True)
        else:
            record = replace(record, unified=None, used_unified=False)
        augmented.append(record)
    return augmented


def unify_for_inference(instruction: str, uni: InstructionUnifier) -> str:
    if not instruction or not instruction.strip():
        raise RangeError("Instruction must be a non-empty string")
    UNIFICATION_CALLS["inference"] += 1
    return uni.unify(instruction)
