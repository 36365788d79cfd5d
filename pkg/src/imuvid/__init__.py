"""Cross-modal IMU/video contrastive pretraining with zero-shot and few-shot
activity evaluation, self-contained on a synthetic paired-modality dataset.
"""

from .autodiff import Parameter, Tensor, backward, no_grad
from .align import (
    CrossModalAligner,
    ProjectionHead,
    project_and_normalize,
    sigmoid_contrastive_loss,
    softmax_contrastive_loss,
)
from .datatypes import IMUWindow, RawRecording, VideoClip
from .datasets import PairItem, PairedDataset, load_dataset, save_dataset
from .errors import (
    ConfigError,
    FormatError,
    ImuvidError,
    InputError,
    NonFiniteGradientError,
    ShapeMismatchError,
    UsageError,
)
from .evaluate import (
    FewShotSpec,
    WindowClassifier,
    ZeroShotClassifier,
    bootstrap_zeroshot,
    fewshot_protocol,
)
from .gradcheck import grad_check
from .imu_encoder import (
    EncoderConfig,
    IMUEncoder,
    MaskedPretrainer,
    MaskedReconstructionModel,
    PatchConfig,
    patchify,
)
from .metrics import (
    MetricsReport,
    balanced_accuracy,
    macro_f1,
    mrr,
    recall_at_k,
)
from .optim import AdamW, CosineSchedule, cosine_lr
from .preprocessing import (
    IMUPreprocessor,
    median_filter,
    preprocess_recording,
    resample_to_50hz,
    select_frames,
    windowize,
    zscore,
)
from .synthetic import ActivitySpec, SynthConfig, gen_pair, gen_prototypes, generate_dataset
from .video_encoder import (
    ClipEmbedding,
    PrecomputedClipEmbedder,
    VideoClipEncoder,
    VideoEncoderConfig,
    load_precomputed,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "grad_check",
    "AdamW", "CosineSchedule", "cosine_lr",
    "RawRecording", "IMUWindow", "VideoClip",
    "IMUPreprocessor", "resample_to_50hz", "median_filter", "zscore",
    "windowize", "select_frames", "preprocess_recording",
    "PatchConfig", "EncoderConfig", "IMUEncoder", "patchify",
    "MaskedReconstructionModel", "MaskedPretrainer",
    "VideoEncoderConfig", "VideoClipEncoder", "PrecomputedClipEmbedder",
    "ClipEmbedding", "load_precomputed",
    "ProjectionHead", "project_and_normalize", "sigmoid_contrastive_loss",
    "softmax_contrastive_loss", "CrossModalAligner",
    "balanced_accuracy", "macro_f1", "mrr", "recall_at_k", "MetricsReport",
    "ZeroShotClassifier", "WindowClassifier", "FewShotSpec",
    "bootstrap_zeroshot", "fewshot_protocol",
    "ActivitySpec", "SynthConfig", "gen_pair", "generate_dataset", "gen_prototypes",
    "PairItem", "PairedDataset", "save_dataset", "load_dataset",
    "ImuvidError", "ShapeMismatchError", "ConfigError", "InputError",
    "UsageError", "FormatError", "NonFiniteGradientError",
]
