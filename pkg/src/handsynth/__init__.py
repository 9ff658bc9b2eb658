"""Handwriting-style text image synthesis with per-writer latent styles."""

from .core import (
    Charset,
    Dataset,
    DatasetError,
    LabeledSample,
    UnknownCharacterError,
    decode_prediction,
    encode_transcript,
    load_dataset,
    load_image,
)
from .discriminators import (
    DualDiscriminator,
    adv_g_loss,
    char_adv_losses,
    char_content_loss,
    join_adv_losses,
    join_id_loss,
)
from .evaluation import (
    FeatureStats,
    cer,
    collect_stats,
    frechet_distance,
    make_trunk_extractor,
    per_writer_fid,
    wer,
)
from .generator import GeneratorNet
from .render import (
    GlyphAtlas,
    LayoutError,
    LayoutSpec,
    layout_curved,
    layout_linear,
    normalize_size,
    render,
    render_text,
)
from .stylebank import StyleBank, interpolate
from .synthesis import generate, save_image, style_sweep, synthesize_dataset
from .training import (
    Checkpoint,
    CheckpointError,
    ConfigError,
    ModelConfig,
    Trainer,
    TrainingConfig,
    identity_loss,
    load_checkpoint,
    load_training_config,
    lr_at,
)

__version__ = "0.1.0"
