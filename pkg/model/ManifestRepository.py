import logging
from pathlib import Path

import torch
from pydantic import ValidationError

from .Manifest import GroupEntry, ManifestRecord, PairEntry, Split
from .errors import ManifestError, ProtocolError
from .image_grid import load_image, save_image


class ManifestRepository:
    paths = {
        "pairs": "pairs",
        "packed": "packed",
    }
    MANIFEST = "manifest.jsonl"
    GROUPS = "groups.jsonl"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.groups: dict[str, GroupEntry] = {}
        self.records: list[ManifestRecord] = []

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST

    def _ensure_directories_exist(self) -> None:
        """Ensure the output root and its image directories exist."""
        for path in self.paths.values():
            (self.root / path).mkdir(parents=True, exist_ok=True)

    def add_group(
        self,
        group_id: str,
        split: Split,
        instruction: str,
        unified_instruction: str,
        pairs: list[tuple[str, str, torch.Tensor, torch.Tensor, float, int]],
        seed: int,
    ) -> GroupEntry:
        """Write each ``(caption, edited, in, out, score, seed)`` pair as PNGs and register the group."""
        self._ensure_directories_exist()
        entries = []
        for index, (caption, edited, image_in, image_out, score, pair_seed) in enumerate(pairs):
            in_path = Path(self.paths["pairs"]) / group_id / f"{index}_in.png"
            out_path = Path(self.paths["pairs"]) / group_id / f"{index}_out.png"
            save_image(image_in, self.root / in_path)
            save_image(image_out, self.root / out_path)
            entries.append(PairEntry(
                caption=caption, edited_caption=edited, in_path=in_path.as_posix(),
                out_path=out_path.as_posix(), score=score, seed=pair_seed,
            ))
        entry = GroupEntry(
            group_id=group_id, split=split, instruction=instruction,
            unified_instruction=unified_instruction, pairs=entries, seed=seed,
        )
        self.groups[group_id] = entry
        return entry

    def add_record(
        self,
        group_id: str,
        split: Split,
        pair_indices: tuple[int, int],
        train_grid: torch.Tensor,
        cond_grid: torch.Tensor,
        seed: int,
    ) -> ManifestRecord:
        if group_id not in self.groups:
            raise ManifestError(f"Record refers to unknown group {group_id}")
        group = self.groups[group_id]
        self._ensure_directories_exist()
        record_id = f"{group_id}_{pair_indices[0]}{pair_indices[1]}"
        grid_path = Path(self.paths["packed"]) / f"{record_id}_train.png"
        cond_path = Path(self.paths["packed"]) / f"{record_id}_cond.png"
        save_image(train_grid, self.root / grid_path)
        save_image(cond_grid, self.root / cond_path)
        record = ManifestRecord(
            record_id=record_id, group_id=group_id, split=split,
            instruction=group.instruction, unified_instruction=group.unified_instruction,
            pair_indices=pair_indices, grid_path=grid_path.as_posix(),
            cond_path=cond_path.as_posix(), seed=seed,
        )
        self.records.append(record)
        return record

    def save(self) -> Path:
        """Write groups.jsonl and manifest.jsonl, one JSON object per line."""
        self._ensure_directories_exist()
        with open(self.root / self.GROUPS, 'w', encoding='utf-8') as f:
            for group in self.groups.values():
                f.write(group.model_dump_json() + "\n")
        with open(self.manifest_path, 'w', encoding='utf-8') as f:
            for record in self.records:
                f.write(record.model_dump_json() + "\n")
        logging.info(f"Saved manifest with {len(self.records)} records to {self.manifest_path}")
        return self.manifest_path

    @classmethod
    def load(cls, path: str | Path) -> "ManifestRepository":
        """Load a manifest file (or its directory) and check every referenced file exists."""
        path = Path(path)
        root = path if path.is_dir() else path.parent
        repository = cls(root)
        if not repository.manifest_path.is_file():
            raise ManifestError(f"No manifest at {repository.manifest_path}")
        try:
            for line in cls._lines(root / cls.GROUPS):
                group = GroupEntry.model_validate_json(line)
                repository.groups[group.group_id] = group
            repository.records = [
                ManifestRecord.model_validate_json(line) for line in cls._lines(repository.manifest_path)
            ]
        except ValidationError as e:
            raise ManifestError(f"Malformed manifest under {root}: {e}") from e
        repository.validate()
        return repository

    @staticmethod
    def _lines(path: Path) -> list[str]:
        if not path.is_file():
            raise ManifestError(f"Missing manifest file {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return [line for line in (raw.strip() for raw in f) if line]

    def validate(self) -> None:
        for group in self.groups.values():
            for pair in group.pairs:
                self._require(pair.in_path)
                self._require(pair.out_path)
        for record in self.records:
            group = self.groups.get(record.group_id)
            if group is None:
                raise ManifestError(f"Record {record.record_id} refers to unknown group {record.group_id}")
            first, second = record.pair_indices
            if first == second or not (0 <= first < len(group.pairs) and 0 <= second < len(group.pairs)):
                raise ManifestError(f"Record {record.record_id} has invalid pair indices {record.pair_indices}")
            self._require(record.grid_path)
            self._require(record.cond_path)

    def _require(self, relative: str) -> Path:
        path = self.root / relative
        if not path.is_file():
            raise ManifestError(f"Manifest refers to missing file {path}")
        return path

    def split(self, label: Split) -> list[ManifestRecord]:
        return [record for record in self.records if record.split == label]

    def group_ids(self, label: Split) -> set[str]:
        return {record.group_id for record in self.split(label)}

    def training_pairings(self) -> set[tuple[str, frozenset[int]]]:
        return {record.pairing for record in self.split(Split.TRAIN)}

    def check_disjoint(self, records: list[ManifestRecord], label: Split) -> None:
        """Out-of-domain records may share no group with training; in-domain ones no pairing."""
        if label == Split.OUT_OF_DOMAIN:
            overlap = {record.group_id for record in records} & self.group_ids(Split.TRAIN)
            if overlap:
                raise ProtocolError(f"Out-of-domain records share {len(overlap)} groups with training: {sorted(overlap)[:5]}")
        elif label == Split.IN_DOMAIN:
            overlap = {record.pairing for record in records} & self.training_pairings()
            if overlap:
                raise ProtocolError(f"In-domain records reuse {len(overlap)} training pairings")

    def load_grids(self, record: ManifestRecord, dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
        return (
            load_image(self._require(record.grid_path), dtype),
            load_image(self._require(record.cond_path), dtype),
        )

    def query_pair(self, record: ManifestRecord) -> PairEntry:
        return self.groups[record.group_id].pairs[record.pair_indices[1]]

    def pair_count(self) -> int:
        return sum(len(group.pairs) for group in self.groups.values())
