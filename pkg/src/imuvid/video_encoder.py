"""Pluggable clip embedders: a toy spatio-temporal transformer and a
precomputed-embedding table.

The toy encoder tokenizes a 10-frame clip into non-overlapping space-time
cubes, applies joint attention over all tokens, and mean-pools the outputs.
The precomputed embedder serves externally produced clip vectors by id, so a
large pretrained video model can stand in without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .datatypes import CLIP_FRAMES, VideoClip, stack_clips
from .errors import ConfigError, FormatError, InputError
from .nn import Dropout, Linear, Module, TransformerStack


@dataclass(frozen=True)
class VideoEncoderConfig:
    """Toy spatio-temporal transformer dimensions."""

    frame_height: int = 16
    frame_width: int = 16
    frame_channels: int = 1
    tubelet: tuple[int, int, int] = (2, 4, 4)
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.05

    def __post_init__(self):
        t, h, w = self.tubelet
        if t < 1 or h < 1 or w < 1:
            raise ConfigError(f"tubelet dims must be positive: {self.tubelet}")
        if CLIP_FRAMES % t != 0:
            raise ConfigError(f"{CLIP_FRAMES} frames not divisible by tubelet t={t}")
        if self.frame_height % h != 0 or self.frame_width % w != 0:
            raise ConfigError(
                f"frame {self.frame_height}x{self.frame_width} not divisible by "
                f"tubelet {h}x{w}"
            )
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_layers < 0:
            raise ConfigError("num_layers must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1): {self.dropout}")

    @property
    def num_tokens(self) -> int:
        t, h, w = self.tubelet
        return (CLIP_FRAMES // t) * (self.frame_height // h) * (self.frame_width // w)

    @property
    def cube_dim(self) -> int:
        t, h, w = self.tubelet
        return t * h * w * self.frame_channels


@dataclass
class ClipEmbedding:
    """A clip vector in the video encoder's native space."""

    vector: np.ndarray
    clip_id: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1 or not np.isfinite(self.vector).all():
            raise InputError(f"embedding {self.clip_id!r} must be a finite 1-d vector")


ClipBatch = Union[np.ndarray, Sequence[VideoClip], Tensor]


def _as_clip_array(clips: ClipBatch, cfg: VideoEncoderConfig):
    expected = (CLIP_FRAMES, cfg.frame_height, cfg.frame_width, cfg.frame_channels)
    if isinstance(clips, Tensor):
        arr = clips
        shape = clips.shape
    else:
        if not isinstance(clips, np.ndarray):
            clips = stack_clips(list(clips))
        arr = np.asarray(clips, dtype=np.float32)
        if arr.ndim == 4:
            arr = arr[None]
        shape = arr.shape
    if len(shape) != 5 or shape[1:] != expected:
        raise InputError(f"expected clips of shape (B, {expected}), got {shape}")
    return arr if isinstance(arr, Tensor) else Tensor(arr)


class VideoClipEncoder(Module):
    """Cube embedding + joint space-time attention + mean pooling."""

    def __init__(self, cfg: VideoEncoderConfig = VideoEncoderConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.rng = np.random.default_rng([seed, 202])
        self.cube_proj = Linear(cfg.cube_dim, cfg.model_dim, self.rng)
        self.pos_embed = Parameter(
            (0.02 * self.rng.standard_normal((cfg.num_tokens, cfg.model_dim))).astype(
                np.float32
            ),
            name="pos_embed",
        )
        self.blocks = TransformerStack(
            cfg.model_dim, cfg.num_layers, cfg.num_heads, cfg.ff_dim, self.rng,
            dropout=cfg.dropout,
        )
        self.embed_dropout = Dropout(cfg.dropout, self.rng)
        self.refresh_parameter_names()

    @property
    def output_dim(self) -> int:
        return self.cfg.model_dim

    def cube_embed(self, clips: ClipBatch) -> Tensor:
        """Tokenize into (B, T', D): flatten non-overlapping cubes, project, add positions."""
        cfg = self.cfg
        x = _as_clip_array(clips, cfg)
        b = x.shape[0]
        t, h, w = cfg.tubelet
        nt, nh, nw = CLIP_FRAMES // t, cfg.frame_height // h, cfg.frame_width // w
        x = ad.reshape(x, (b, nt, t, nh, h, nw, w, cfg.frame_channels))
        x = ad.transpose(x, (0, 1, 3, 5, 2, 4, 6, 7))
        cubes = ad.reshape(x, (b, cfg.num_tokens, cfg.cube_dim))
        return ad.add(self.cube_proj(cubes), self.pos_embed)

    def forward(self, clips: ClipBatch) -> Tensor:
        """Clip embeddings (B, D): mean over transformer token outputs."""
        tokens = self.embed_dropout(self.cube_embed(clips))
        out = self.blocks(tokens)
        return ad.tensor_mean(out, axis=1)

    def embed_clip(self, clip: VideoClip) -> ClipEmbedding:
        with ad.no_grad():
            vec = self.forward([clip]).data[0]
        return ClipEmbedding(vector=vec, clip_id=clip.source_id)


class PrecomputedClipEmbedder(Module):
    """Serves clip embeddings from an id -> vector table (no learnable state)."""

    def __init__(self, dim: int, table: Optional[dict[str, np.ndarray]] = None):
        super().__init__()
        if dim <= 0:
            raise ConfigError(f"embedding dimension must be positive, got {dim}")
        self.dim = dim
        self.table: dict[str, np.ndarray] = {}
        for key, vec in (table or {}).items():
            self.add(key, vec)

    @property
    def output_dim(self) -> int:
        return self.dim

    def add(self, clip_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise FormatError(
                f"embedding {clip_id!r} has dimension {vector.shape}, expected ({self.dim},)"
            )
        self.table[clip_id] = vector

    def embed_ids(self, ids: Sequence[str]) -> Tensor:
        missing = [i for i in ids if i not in self.table]
        if missing:
            raise KeyError(f"no precomputed embedding for ids {missing[:5]}")
        return Tensor(np.stack([self.table[i] for i in ids]))

    def __len__(self):
        return len(self.table)


def load_precomputed(
    source: str, ids: Optional[Sequence[str]] = None, expected_dim: Optional[int] = None
) -> dict[str, ClipEmbedding]:
    """Load an embedding file into an id -> ClipEmbedding mapping.

    With ``ids`` given, only those entries are returned and a missing id is a
    lookup error. A file whose declared dimension disagrees with
    ``expected_dim`` is rejected.
    """
    from .formats import read_embedding_file

    dim, table = read_embedding_file(source)
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(
            f"embedding file declares dim {dim}, expected {expected_dim}", path=source
        )
    if ids is None:
        return {k: ClipEmbedding(vector=v, clip_id=k) for k, v in table.items()}
    missing = [i for i in ids if i not in table]
    if missing:
        raise KeyError(f"ids missing from {source}: {missing[:5]}")
    return {i: ClipEmbedding(vector=table[i], clip_id=i) for i in ids}
