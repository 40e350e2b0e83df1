from enum import Enum
from pydantic import BaseModel, Field


class Split(Enum):
    TRAIN = "train"
    IN_DOMAIN = "in"
    OUT_OF_DOMAIN = "ood"


class CaptionPair(BaseModel):
    caption: str
    edited_caption: str


class GroupDraft(BaseModel):
    instruction: str
    caption_pairs: list[CaptionPair]


class PairEntry(BaseModel):
    caption: str
    edited_caption: str
    in_path: str
    out_path: str
    score: float
    seed: int


class GroupEntry(BaseModel):
    group_id: str
    split: Split
    instruction: str
    unified_instruction: str
    pairs: list[PairEntry] = Field(min_length=2)
    seed: int


class ManifestRecord(BaseModel):
    """One packed grid: two distinct pairs of one group, example pair first."""
    record_id: str
    group_id: str
    split: Split
    instruction: str
    unified_instruction: str
    pair_indices: tuple[int, int]
    grid_path: str
    cond_path: str
    seed: int

    @property
    def pairing(self) -> tuple[str, frozenset[int]]:
        return self.group_id, frozenset(self.pair_indices)
