from .errors import (
    GIEError,
    CheckpointError,
    GridDimensionError,
    ManifestError,
    NonFiniteLossError,
    ProtocolError,
    ProviderContractError,
    ProviderError,
    RangeError,
    ReconstructionError,
    ScheduleError,
)
from .image_grid import GREY, compose, decompose, load_image, mask_example_row, mask_query, save_grid, save_image
from .diffusion import LATENTS, LatentSample, NoiseSchedule, forward_noise, predict_noise, reconstruct_x0, sample
from .ssm import InjectionBlock, Ss2dBlock, ZeroConv2d, cross_merge, cross_scan, encode_condition, inject, linear_scan
from .denoiser import ConditionedDenoiser, build_denoiser
from .providers import (
    CachingUnifier,
    Embedder,
    InstructionUnifier,
    MockEmbedder,
    MockSegmenter,
    MockUnifier,
    PromptGenerator,
    Providers,
    Segmenter,
    build_providers,
    resolve_provider,
)
from .editing_shift import editing_shift, editing_shift_loss, training_shift_loss
from .selective_matching import MaskCache, SelectiveMask, build_mask, selective_area_loss
from .instruction import InstructionRecord, augment_batch, unify_for_inference
from .Manifest import CaptionPair, GroupDraft, GroupEntry, ManifestRecord, PairEntry, Split
from .ManifestRepository import ManifestRepository
from .config import RunConfig, TrainConfig, derive_seed, load_config
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluator import EvalReport, directional_similarity, evaluate_split, feature_distance, frechet_distance
from .inference import edit_image, record_editor
from .trainer import TrainReport, TrainingExample, apply_dropout, compute_losses, train, train_step
from .ablation import VARIANTS, run_ablation
