"""Self-supervised video representation learning from temporal continuity.

Three pretext tasks share one 3D-conv backbone: is a clip continuous
(justification), where was it cut (localization), and what was cut out
(missing-section approximation).
"""

from .datakit import (CorpusManifest, SyntheticWorldSpec, VideoRecord, generate_synthetic_corpus,
                      load_manifest, read_clip)
from .evaluation import (ProbeConfig, RetrievalReport, VideoFeature, extract_video_feature,
                         linear_probe, retrieval, saliency_map)
from .losses import (LossBreakdown, LossConfig, cosine_similarity, joint_loss, loss_approximation,
                     loss_justification, loss_localization)
from .net import BackboneSpec, ContinuityEmbeddings, ContinuityNet, HeadSpec
from .sampler import (AugmentationPolicy, ClipTriple, SamplerConfig, TensorBatch, augment,
                      build_batch, sample_clip_triple, to_tensor)
from .trainer import TrainConfig, evaluate_pretext, pretrain, train_step

__version__ = "0.1.0"

__all__ = [
    "CorpusManifest",
    "SyntheticWorldSpec",
    "VideoRecord",
    "generate_synthetic_corpus",
    "load_manifest",
    "read_clip",
    "ProbeConfig",
    "RetrievalReport",
    "VideoFeature",
    "extract_video_feature",
    "linear_probe",
    "retrieval",
    "saliency_map",
    "LossBreakdown",
    "LossConfig",
    "cosine_similarity",
    "joint_loss",
    "loss_approximation",
    "loss_justification",
    "loss_localization",
    "BackboneSpec",
    "ContinuityEmbeddings",
    "ContinuityNet",
    "HeadSpec",
    "AugmentationPolicy",
    "ClipTriple",
    "SamplerConfig",
    "TensorBatch",
    "augment",
    "build_batch",
    "sample_clip_triple",
    "to_tensor",
    "TrainConfig",
    "evaluate_pretext",
    "pretrain",
    "train_step",
]
