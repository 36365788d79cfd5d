"""Save/load trained models through the checkpoint container.

Every checkpoint carries a JSON config echo describing the architecture, so
loading never needs the original construction code path. Parameter names are
prefixed by role: ``imu.`` (IMU encoder), ``vid.`` (video encoder),
``align.`` (projection heads, temperature, bias), ``recon.``
(reconstruction head), ``head.`` (classification head).
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Optional

import numpy as np

from .align import CrossModalAligner
from .errors import ConfigError, FormatError
from .evaluate import WindowClassifier
from .formats import read_checkpoint, write_checkpoint
from .imu_encoder import (
    EncoderConfig,
    IMUEncoder,
    MaskedPretrainer,
    MaskedReconstructionModel,
    PatchConfig,
)
from .video_encoder import PrecomputedClipEmbedder, VideoEncoderConfig


def _patch_cfg(d: dict) -> PatchConfig:
    return PatchConfig(**d)


def _imu_cfg(d: dict) -> EncoderConfig:
    return EncoderConfig(**d)


def _video_cfg(d: dict) -> VideoEncoderConfig:
    d = dict(d)
    d["tubelet"] = tuple(d["tubelet"])
    return VideoEncoderConfig(**d)


# -- cross-modal aligner ---------------------------------------------------------


def save_aligner(aligner: CrossModalAligner, path) -> None:
    aligner._check_fitted("model_")
    model = aligner.model_
    config = {
        "kind": "align",
        "patch_config": asdict(aligner.patch_config),
        "imu_config": asdict(aligner.imu_config),
        "video_kind": "precomputed" if isinstance(model.vid, PrecomputedClipEmbedder) else "toy",
        "video_config": asdict(aligner.video_config),
        "precomputed_dim": model.vid.output_dim
        if isinstance(model.vid, PrecomputedClipEmbedder)
        else None,
        "proj_dim": aligner.proj_dim,
        "proj_hidden": aligner.proj_hidden,
        "loss": aligner.loss,
        "init_temperature": aligner.init_temperature,
        "init_bias": aligner.init_bias,
        "epochs": aligner.epochs,
        "batch_size": aligner.batch_size,
        "lr": aligner.lr,
        "weight_decay": aligner.weight_decay,
        "seed": aligner.seed,
    }
    write_checkpoint(path, model.state_dict(), config)


def load_aligner(
    path, precomputed_embeddings: Optional[dict[str, np.ndarray]] = None
) -> CrossModalAligner:
    entries, config = read_checkpoint(path)
    if config is None or config.get("kind") != "align":
        raise FormatError(
            f"checkpoint kind {None if config is None else config.get('kind')!r} "
            "is not an alignment checkpoint",
            path=path,
        )
    aligner = CrossModalAligner(
        patch_config=_patch_cfg(config["patch_config"]),
        imu_config=_imu_cfg(config["imu_config"]),
        video_config=_video_cfg(config["video_config"]),
        proj_dim=config["proj_dim"],
        proj_hidden=config["proj_hidden"],
        loss=config["loss"],
        init_temperature=config["init_temperature"],
        init_bias=config["init_bias"],
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        lr=config["lr"],
        weight_decay=config["weight_decay"],
        precomputed_embeddings=precomputed_embeddings,
        seed=config["seed"],
    )
    if config["video_kind"] == "precomputed" and precomputed_embeddings is None:
        raise ConfigError(
            "checkpoint was trained with precomputed clip embeddings; "
            "pass precomputed_embeddings to load it"
        )
    model = aligner._build_model()
    model.load_state_dict(entries)
    model.eval()
    aligner.model_ = model
    return aligner


# -- masked pretrainer -------------------------------------------------------------


def save_masked(pretrainer: MaskedPretrainer, path) -> None:
    if pretrainer.model_ is None:
        raise ConfigError("MaskedPretrainer is not fitted")
    config = {
        "kind": "masked",
        "patch_config": asdict(pretrainer.patch_config),
        "imu_config": asdict(pretrainer.imu_config),
        "mask_ratio": pretrainer.mask_ratio,
        "epochs": pretrainer.epochs,
        "batch_size": pretrainer.batch_size,
        "lr": pretrainer.lr,
        "weight_decay": pretrainer.weight_decay,
        "seed": pretrainer.seed,
    }
    write_checkpoint(path, pretrainer.model_.state_dict(), config)


def load_masked(path) -> MaskedPretrainer:
    entries, config = read_checkpoint(path)
    if config is None or config.get("kind") != "masked":
        raise FormatError("not a masked-pretraining checkpoint", path=path)
    pre = MaskedPretrainer(
        patch_config=_patch_cfg(config["patch_config"]),
        imu_config=_imu_cfg(config["imu_config"]),
        mask_ratio=config["mask_ratio"],
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        lr=config["lr"],
        weight_decay=config["weight_decay"],
        seed=config["seed"],
    )
    encoder = IMUEncoder(pre.patch_config, pre.imu_config, seed=pre.seed)
    model = MaskedReconstructionModel(encoder)
    model.load_state_dict(entries)
    model.eval()
    pre.model_ = model
    return pre


# -- supervised classifier -----------------------------------------------------------


def save_classifier(clf: WindowClassifier, path) -> None:
    clf._check_fitted("head_")
    config = {
        "kind": "supervised",
        "mode": clf.mode,
        "patch_config": asdict(clf.encoder_.patch_cfg),
        "imu_config": asdict(clf.encoder_.cfg),
        "classes": [int(c) for c in clf.classes_],
        "epochs": clf.epochs,
        "batch_size": clf.batch_size,
        "head_lr": clf.head_lr,
        "encoder_lr": clf.encoder_lr,
        "weight_decay": clf.weight_decay,
        "seed": clf.seed,
    }
    entries = clf.encoder_.state_dict("imu.")
    entries.update(clf.head_.state_dict("head."))
    write_checkpoint(path, entries, config)


def load_classifier(path) -> WindowClassifier:
    from .nn import Linear

    entries, config = read_checkpoint(path)
    if config is None or config.get("kind") != "supervised":
        raise FormatError("not a supervised checkpoint", path=path)
    clf = WindowClassifier(
        mode=config["mode"],
        patch_config=_patch_cfg(config["patch_config"]),
        imu_config=_imu_cfg(config["imu_config"]),
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        head_lr=config["head_lr"],
        encoder_lr=config["encoder_lr"],
        weight_decay=config["weight_decay"],
        seed=config["seed"],
    )
    clf.classes_ = np.asarray(config["classes"])
    clf.encoder_ = IMUEncoder(clf.patch_config, clf.imu_config, seed=clf.seed)
    clf.encoder_.load_state_dict(entries, prefix="imu.")
    clf.encoder_.eval()
    rng = np.random.default_rng(0)
    clf.head_ = Linear(clf.imu_config.window_embedding_dim, len(clf.classes_), rng)
    clf.head_.load_state_dict(entries, prefix="head.")
    return clf


# -- generic encoder access ------------------------------------------------------------


def load_imu_encoder(path) -> tuple[IMUEncoder, dict]:
    """Pull the IMU encoder out of any checkpoint kind (for probing/finetuning)."""
    entries, config = read_checkpoint(path)
    if config is None or "patch_config" not in config or "imu_config" not in config:
        raise FormatError("checkpoint has no usable config echo", path=path)
    encoder = IMUEncoder(
        _patch_cfg(config["patch_config"]), _imu_cfg(config["imu_config"]),
        seed=config.get("seed", 0),
    )
    encoder.load_state_dict(entries, prefix="imu.")
    encoder.eval()
    return encoder, config
