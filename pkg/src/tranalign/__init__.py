"""Stripe-aligned vessel re-identification toolkit.

Library surface: imaging (letterbox + sway augmentation), synthgen (synthetic
dataset), align (stripe alignment distances), losses (triplet/identity/
transfer), backbone (conv feature extractor), trainer, evaluation (mAP/CMC),
checkpoint IO, and reports (CSV + figures). The `tranalign` console script
wires them together.
"""
from .align import (
    AlignmentResult,
    ImageEmbedding,
    PairDistance,
    StripeMatrix,
    compress_stripes,
    dp_align,
    global_distance,
    local_distance,
    local_dist_matrix,
    pair_distance,
)
from .backbone import Backbone, BackboneConfig, backbone_from_arrays, global_pool
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_digest, effective_config, train_config_from
from .errors import (
    BatchCompositionError,
    CheckpointFormatError,
    DatasetError,
    GradientStateError,
    InvalidInputError,
    NumericError,
    RangeError,
    ShapeError,
    TranAlignError,
)
from .evaluation import (
    Metrics,
    QueryReport,
    average_precision,
    distance_matrix,
    evaluate,
    query_topk,
    retrieval_metrics,
)
from .imaging import (
    GRAY_FILL,
    VESSEL_TYPES,
    ImageSample,
    ManifestEntry,
    ModelInput,
    SssParams,
    aspect_normalize,
    load_image,
    read_manifest,
    read_manifest_entries,
    sample_sss_angle,
    sss_augment,
    write_manifest,
)
from .losses import (
    DomainBatch,
    IdLossConfig,
    LossBreakdown,
    TransferConfig,
    TriHardConfig,
    coral,
    id_loss,
    joint_loss,
    mmd,
    rbf_kernel,
    transfer_loss,
    trihard_loss,
)
from .synthgen import (
    DatasetConfig,
    VesselGeometry,
    ViewParams,
    generate_dataset,
    generate_identity,
    render,
)
from .trainer import PkBatch, TrainOutput, sample_pk_batch, sample_transfer_batch, train, train_step

__version__ = "0.1.0"
