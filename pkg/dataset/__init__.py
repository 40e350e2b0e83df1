from .promptgen import MockPromptGenerator
from .synthesizer import PairSynthesizer, Scene, parse_caption, render
from .pipeline import (
    EditGroup,
    PackedGrid,
    PipelineSummary,
    best_candidate,
    generate_groups,
    pack_training_grids,
    run_pipeline,
    split_groups,
    synthesize_pairs,
)
