"""Free-resolution StyleGAN2-style synthesis, encoding and manipulation."""

from .alignment import AlignInfo, MarkerDetector, align_crop, align_transform, manual_crop
from .checkpoint import (
    import_external,
    load_archive,
    load_generator,
    load_module_state,
    parameter_checksum,
    save_archive,
    save_generator,
    save_module,
)
from .config import RunConfig, load_config, resolve_generator_spec
from .imageio import (
    load_frames,
    load_image,
    pad_to_grid,
    save_frames,
    save_image,
    unpad_output,
)
from .encoder import (
    Encoder,
    EncoderSpec,
    FusionStack,
    SkipSet,
    TranslationNet,
    compose_style,
    encoder_forward,
    fuse_skip,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DetectionError,
    GeneratorDriftError,
    ShapeError,
    SpecError,
    VariganError,
    VerificationError,
)
from .inversion import (
    InversionResult,
    domain_transfer,
    edit_latent,
    invert_step1,
    invert_step2,
    rotate_feature,
    shift_feature,
)
from .losses import (
    Discriminator,
    LossWeights,
    loss_adv,
    loss_id,
    loss_rec,
    loss_reg,
    loss_tmp,
    r1_penalty,
)
from .metrics import (
    RandomFeaturePyramid,
    RandomIdentityEmbedder,
    default_identity_embedder,
    default_perceptual_metric,
    perceptual_distance,
)
from .synthesis import (
    Generator,
    GeneratorEX,
    GeneratorSpec,
    NoiseField,
    map_z_to_w,
    modulated_conv2d,
    receptive_radius,
    refactor,
    style_mixing,
    synthesize,
    synthesize_baseline,
    upsample_constant,
)
from .tasks import (
    PairedSample,
    TaskSpec,
    TrainResult,
    augment_geometric,
    derive_transferred_generator,
    load_pairs_from_manifest,
    mask_transform,
    metric_id_consistency,
    metric_id_maintenance,
    read_manifest,
    sketch_transform,
    synthesize_pairs,
    train_task,
    upsample_input,
    write_manifest,
)
from .verification import VerificationReport, run_battery, verify_pair

__version__ = "0.1.0"
