#!.venv/bin/python

from dotenv import load_dotenv
from pydantic import ValidationError

import argparse
import logging
import sys
from pathlib import Path

from model import (
    ManifestRepository,
    RunConfig,
    Split,
    TrainConfig,
    build_providers,
    edit_image,
    evaluate_split,
    load_checkpoint,
    load_config,
    load_image,
    record_editor,
    resolve_provider,
    run_ablation,
    save_grid,
    save_image,
    train,
)

# training records are never an evaluation target
EVAL_SPLITS = [Split.IN_DOMAIN.value, Split.OUT_OF_DOMAIN.value]


def setup_logging(debug=False):
    level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        force=True
    )


def log_run(subcommand: str, paths: dict[str, str | None], seed: int, cfg: TrainConfig, out_dir: Path | None = None) -> RunConfig:
    run = RunConfig(
        subcommand=subcommand,
        paths={name: str(path) for name, path in paths.items() if path is not None},
        seed=seed,
        config=cfg,
    )
    run.log()
    if out_dir is not None:
        run.write(out_dir)
    return run


def cmd_dataset(args) -> Path:
    from dataset import run_pipeline

    cfg = load_config(args.config, groups=args.groups, candidates=args.candidates, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_run("dataset", {"out": out_dir, "config": args.config}, cfg.seed, cfg, out_dir)

    providers = build_providers(cfg)
    promptgen = resolve_provider("promptgen", cfg.promptgen, cfg)
    summary = run_pipeline(cfg, out_dir, promptgen, providers.embedder, providers.unifier, cfg.seed)
    print(f"groups={summary.groups} pairs={summary.pairs} packed={summary.packed} manifest={summary.manifest_path}")
    return summary.manifest_path


def cmd_train(args) -> Path:
    cfg = load_config(args.config, steps=args.steps, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_run("train", {"manifest": args.manifest, "config": args.config, "out": out_dir, "resume": args.resume},
            cfg.seed, cfg, out_dir)

    manifest = ManifestRepository.load(args.manifest)
    report = train(manifest, cfg, build_providers(cfg), out_dir, resume=args.resume)
    print(f"steps={len(report.steps)} checkpoint={report.final_checkpoint}")
    return Path(report.final_checkpoint)


def _sampling_config(cfg: TrainConfig, args) -> TrainConfig:
    overrides = {"guidance_scale": args.guidance_scale, "sample_steps": args.sample_steps, "progress": not args.quiet}
    return TrainConfig(**(cfg.model_dump() | {key: value for key, value in overrides.items() if value is not None}))


def cmd_edit(args) -> Path:
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = _sampling_config(checkpoint.config, args)
    log_run("edit", {"checkpoint": args.checkpoint, "example_in": args.example_in, "example_out": args.example_out,
                     "query_in": args.query_in, "out": args.out}, args.seed, cfg)

    dtype = next(checkpoint.state.parameters()).dtype
    images = [load_image(path, dtype) for path in (args.example_in, args.example_out, args.query_in)]
    result, grid = edit_image(
        checkpoint.state, cfg, build_providers(cfg), *images, args.instruction, args.seed, unify=not args.no_unify
    )
    out = save_image(result, args.out)
    if args.save_grid:
        save_grid(grid, out.parent, out.stem, quadrants=True)
    logging.info(f"Wrote edited image to {out}")
    print(out)
    return out


def cmd_evaluate(args) -> Path:
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = _sampling_config(checkpoint.config, args)
    log_run("evaluate", {"checkpoint": args.checkpoint, "manifest": args.manifest, "out": args.out}, args.seed, cfg)

    manifest = ManifestRepository.load(args.manifest)
    split = Split(args.split)
    providers = build_providers(cfg)
    editor = record_editor(checkpoint.state, cfg, providers, args.seed, unify=not args.no_unify)
    report = evaluate_split(
        manifest, manifest.split(split), split, editor, providers, cfg.selected_classes,
        dtype=next(checkpoint.state.parameters()).dtype, checkpoint=str(args.checkpoint), progress=cfg.progress,
    )
    out = report.write(args.out)
    print(f"directional_similarity={report.directional_similarity:.4f} "
          f"feature_distance={report.feature_distance:.4f} masked_error={report.masked_error:.5f}")
    return out


def cmd_ablate(args) -> Path:
    cfg = load_config(args.config, steps=args.steps, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_run("ablate", {"manifest": args.manifest, "config": args.config, "out": out_dir}, cfg.seed, cfg, out_dir)

    manifest = ManifestRepository.load(args.manifest)
    variants = [name.strip() for name in args.variants.split(",")] if args.variants else None
    reports = run_ablation(manifest, cfg, build_providers(cfg), out_dir, variants, Split(args.split))
    for name, report in reports.items():
        print(f"{name}: directional_similarity={report.directional_similarity:.4f} "
              f"feature_distance={report.feature_distance:.4f} masked_error={report.masked_error:.5f}")
    return out_dir / "ablation.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Instruction-guided image editing with visual-prompt grids",
        epilog="Example usage:\n"
               "  python editor.py dataset --out data --groups 60 --seed 7\n"
               "  python editor.py train --manifest data/manifest.jsonl --config configs/toy.env --out run\n"
               "  python editor.py edit --checkpoint run/checkpoint_final.pt --example-in a.png --example-out b.png "
               "--query-in c.png --instruction 'make the circle blue' --out edited.png\n"
               "  python editor.py evaluate --checkpoint run/checkpoint_final.pt --manifest data/manifest.jsonl "
               "--split ood --out report.json\n",
        formatter_class=argparse.RawTextHelpFormatter
    )
    parser.add_argument('-d', '--debug', action='store_true', help='Enable debug logging')
    subparsers = parser.add_subparsers(dest='subcommand', required=True)

    dataset = subparsers.add_parser('dataset', help='Generate instruction groups, image pairs and packed grids')
    dataset.add_argument('--out', type=str, required=True, help='Output directory')
    dataset.add_argument('--groups', type=int, help='Number of instruction groups to generate')
    dataset.add_argument('--candidates', type=int, help='Candidates synthesized per caption pair')
    dataset.add_argument('--seed', type=int, help='Dataset seed')
    dataset.add_argument('--config', type=str, help='KEY=VALUE config file')
    dataset.set_defaults(handler=cmd_dataset)

    train_parser = subparsers.add_parser('train', help='Train the conditioning branch')
    train_parser.add_argument('--manifest', type=str, required=True, help='Dataset manifest.jsonl')
    train_parser.add_argument('--config', type=str, help='KEY=VALUE config file')
    train_parser.add_argument('--out', type=str, required=True, help='Output directory for checkpoints and reports')
    train_parser.add_argument('--steps', type=int, help='Override the number of training steps')
    train_parser.add_argument('--seed', type=int, help='Training seed')
    train_parser.add_argument('--resume', type=str, help='Checkpoint to resume from')
    train_parser.set_defaults(handler=cmd_train)

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument('--seed', type=int, default=0, help='Sampling seed')
    sampling.add_argument('--guidance-scale', type=float, help='Classifier-free guidance scale')
    sampling.add_argument('--sample-steps', type=int, help='Number of sampling steps')
    sampling.add_argument('--no-unify', action='store_true', help='Skip instruction unification')
    sampling.add_argument('--quiet', action='store_true', help='Hide progress bars')

    edit = subparsers.add_parser('edit', parents=[sampling], help='Edit one query image')
    edit.add_argument('--checkpoint', type=str, required=True)
    edit.add_argument('--example-in', type=str, required=True)
    edit.add_argument('--example-out', type=str, required=True)
    edit.add_argument('--query-in', type=str, required=True)
    edit.add_argument('--instruction', type=str, required=True)
    edit.add_argument('--out', type=str, required=True, help='Edited image path (PNG)')
    edit.add_argument('--save-grid', action='store_true', help='Also write the full grid and its quadrants')
    edit.set_defaults(handler=cmd_edit)

    evaluate = subparsers.add_parser('evaluate', parents=[sampling], help='Evaluate a checkpoint on a split')
    evaluate.add_argument('--checkpoint', type=str, required=True)
    evaluate.add_argument('--manifest', type=str, required=True)
    evaluate.add_argument('--split', choices=EVAL_SPLITS, default=Split.OUT_OF_DOMAIN.value)
    evaluate.add_argument('--out', type=str, required=True, help='Report JSON path')
    evaluate.set_defaults(handler=cmd_evaluate)

    ablate = subparsers.add_parser('ablate', help='Train and evaluate single-component removals')
    ablate.add_argument('--manifest', type=str, required=True)
    ablate.add_argument('--config', type=str, help='KEY=VALUE config file')
    ablate.add_argument('--out', type=str, required=True)
    ablate.add_argument('--variants', type=str, help='Comma-separated variant names (default: all)')
    ablate.add_argument('--split', choices=EVAL_SPLITS, default=Split.OUT_OF_DOMAIN.value)
    ablate.add_argument('--steps', type=int, help='Override the number of training steps')
    ablate.add_argument('--seed', type=int, help='Training seed')
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.debug)
    load_dotenv()

    try:
        args.handler(args)
    except (ValidationError, ValueError, OSError) as e:
        logging.error(f"{args.subcommand} failed: {e}")
        return 2
    except Exception as e:
        logging.exception(f"{args.subcommand} failed with an internal error: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
