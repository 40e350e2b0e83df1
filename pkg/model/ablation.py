"""Single-component removals trained and evaluated with identical seeds."""
import logging
from pathlib import Path

from pydantic import BaseModel

from .Manifest import Split
from .ManifestRepository import ManifestRepository
from .checkpoint import load_checkpoint
from .config import TrainConfig
from .evaluator import EvalReport, evaluate_split
from .inference import record_editor
from .providers import Providers
from .trainer import train

# variant -> (config overrides, unify at inference)
VARIANTS: dict[str, tuple[dict, bool]] = {
    "full": ({}, True),
    "without_ssm": ({"conditioning_encoder": "zero_conv"}, True),
    "without_es": ({"lambda_es": 0.0}, True),
    "without_liu": ({"liu_fraction": 0.0}, False),
    "without_sam": ({"lambda_sam": 0.0}, True),
}


class AblationRow(BaseModel):
    directional_similarity: float
    feature_distance: float
    masked_error: float


class AblationTable(BaseModel):
    split: Split
    variants: dict[str, AblationRow]


def variant_config(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in VARIANTS:
        raise ValueError(f"Unknown ablation variant '{name}', expected one of {sorted(VARIANTS)}")
    overrides, _ = VARIANTS[name]
    return TrainConfig(**(cfg.model_dump() | overrides))


def run_ablation(
    manifest: ManifestRepository,
    cfg: TrainConfig,
    providers: Providers,
    out_dir: str | Path,
    variants: list[str] | None = None,
    split: Split = Split.OUT_OF_DOMAIN,
) -> dict[str, EvalReport]:
    out_dir = Path(out_dir)
    names = variants or list(VARIANTS)
    configs = {name: variant_config(cfg, name) for name in names}
    records = manifest.split(split)

    reports = {}
    for name, variant in configs.items():
        logging.info(f"Ablation variant {name}")
        report = train(manifest, variant, providers, out_dir / name)
        checkpoint = load_checkpoint(report.final_checkpoint)
        editor = record_editor(checkpoint.state, variant, providers, variant.seed, unify=VARIANTS[name][1])
        reports[name] = evaluate_split(
            manifest, records, split, editor, providers, variant.selected_classes,
            dtype=next(checkpoint.state.parameters()).dtype, checkpoint=report.final_checkpoint,
            progress=variant.progress,
        )
        reports[name].write(out_dir / name / "eval_report.json")

    table = AblationTable(split=split, variants={
        name: AblationRow(
            directional_similarity=report.directional_similarity,
            feature_distance=report.feature_distance,
            masked_error=report.masked_error,
        )
        for name, report in reports.items()
    })
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.json", 'w', encoding='utf-8') as f:
        f.write(table.model_dump_json(indent=2))
    logging.info(f"Ablation table written to {out_dir / 'ablation.json'}")
    return reports
