"""Cross-modal alignment: projection heads, the pairwise sigmoid loss with
learnable temperature and bias, and the joint pretraining loop.

The loss treats every (IMU_i, clip_j) combination in a batch as an
independent binary decision: the matched pair (i == j) carries label +1,
every mismatch carries -1, and each contributes
log(1 + exp(z * (-t <i, v> + b))). The temperature is learned through its
logarithm so it stays positive.

Note the sign role of b in this formulation: a pair is "satisfied" when
t*<i, v> sits on the correct side of b, so b acts as a similarity
threshold. The default init (t=10, b=+10) places that threshold so that
the many negative pairs start satisfied and the positives carry the early
gradient; initializing b at -10 under this convention makes every negative
pair start maximally violated and training collapses instead of aligning
(the value is still configurable for experimentation).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, TextIO, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .base import BaseEstimator
from .datatypes import stack_clips, stack_windows
from .errors import ConfigError, UsageError
from .imu_encoder import EncoderConfig, IMUEncoder, PatchConfig
from .nn import Linear, Module
from .optim import AdamW
from .training import ProgressLog, epoch_batches, epoch_lr_scale
from .video_encoder import PrecomputedClipEmbedder, VideoClipEncoder, VideoEncoderConfig


class ProjectionHead(Module):
    """Linear map into the shared space; optionally one hidden gelu layer."""

    def __init__(self, in_dim: int, out_dim: int, rng, hidden_dim: Optional[int] = None):
        super().__init__()
        self.hidden_dim = hidden_dim
        if hidden_dim is None:
            self.lin = Linear(in_dim, out_dim, rng)
        else:
            self.lin1 = Linear(in_dim, hidden_dim, rng)
            self.lin2 = Linear(hidden_dim, out_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        if self.hidden_dim is None:
            return self.lin(x)
        return self.lin2(ad.gelu(self.lin1(x)))


def project_and_normalize(embedding: Tensor, head: ProjectionHead) -> Tensor:
    """Project then scale to unit L2 norm (norm within 1e-6 of 1)."""
    return ad.l2_normalize(head(embedding), axis=-1)


def _scalar(value, name) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float32))


def sigmoid_contrastive_loss(
    i_vecs: Tensor,
    v_vecs: Tensor,
    temperature: Union[Tensor, float],
    bias: Union[Tensor, float],
) -> Tensor:
    """Pairwise sigmoid loss over all |B|^2 combinations.

    (1/|B|) * sum_ij log(1 + exp(z_ij * (-t s_ij + b))) with s the pairwise
    similarity matrix and z = +1 on the diagonal, -1 off it. The reduction is
    an exact multiset sum, so the value is exactly invariant under a joint
    permutation of the pairs.
    """
    if i_vecs.shape != v_vecs.shape:
        raise UsageError(
            f"need equally many IMU and video vectors, got {i_vecs.shape} vs {v_vecs.shape}"
        )
    n = i_vecs.shape[0]
    t = _scalar(temperature, "temperature")
    b = _scalar(bias, "bias")
    sims = ad.pairwise_dot(i_vecs, v_vecs)
    z = Tensor((2.0 * np.eye(n) - 1.0).astype(i_vecs.dtype))
    logits = ad.mul(z, ad.sub(b, ad.mul(sims, t)))
    return ad.div(ad.exact_sum(ad.softplus(logits)), float(n))


def softmax_contrastive_loss(
    i_vecs: Tensor, v_vecs: Tensor, temperature: Union[Tensor, float]
) -> Tensor:
    """Symmetric softmax (InfoNCE-style) alternative, kept behind a config flag."""
    if i_vecs.shape != v_vecs.shape:
        raise UsageError(
            f"need equally many IMU and video vectors, got {i_vecs.shape} vs {v_vecs.shape}"
        )
    n = i_vecs.shape[0]
    t = _scalar(temperature, "temperature")
    logits = ad.mul(ad.pairwise_dot(i_vecs, v_vecs), t)
    diag = (np.arange(n), np.arange(n))
    row_nll = ad.neg(ad.tensor_mean(ad.getitem(ad.log_softmax(logits, axis=1), diag)))
    col_nll = ad.neg(ad.tensor_mean(ad.getitem(ad.log_softmax(logits, axis=0), diag)))
    return ad.mul(ad.add(row_nll, col_nll), 0.5)


class AlignmentHead(Module):
    """Both projection heads plus the learnable temperature (as log t) and bias."""

    def __init__(
        self,
        imu_dim: int,
        video_dim: int,
        proj_dim: int,
        rng,
        proj_hidden: Optional[int] = None,
        init_temperature: float = 10.0,
        init_bias: float = 10.0,
    ):
        super().__init__()
        if init_temperature <= 0:
            raise ConfigError("init_temperature must be positive")
        self.imu_head = ProjectionHead(imu_dim, proj_dim, rng, hidden_dim=proj_hidden)
        self.vid_head = ProjectionHead(video_dim, proj_dim, rng, hidden_dim=proj_hidden)
        self.t_prime = Parameter(
            np.asarray(math.log(init_temperature), dtype=np.float32), name="t_prime"
        )
        self.bias = Parameter(np.asarray(init_bias, dtype=np.float32), name="bias")

    @property
    def temperature(self) -> float:
        return float(np.exp(self.t_prime.data))


class AlignModel(Module):
    """IMU encoder + clip embedder + alignment head, trained jointly."""

    def __init__(self, imu_encoder: IMUEncoder, clip_embedder: Module, head: AlignmentHead):
        super().__init__()
        self.imu = imu_encoder
        self.vid = clip_embedder
        self.align = head
        self.refresh_parameter_names()

    def imu_vectors(self, windows) -> Tensor:
        return project_and_normalize(self.imu.window_embedding(windows), self.align.imu_head)

    def video_vectors(self, clips_or_ids) -> Tensor:
        if isinstance(self.vid, PrecomputedClipEmbedder):
            raw = self.vid.embed_ids(clips_or_ids)
        else:
            raw = self.vid(clips_or_ids)
        return project_and_normalize(raw, self.align.vid_head)

    def loss(self, windows, clips_or_ids, kind: str = "sigmoid"):
        """Alignment loss plus batch statistics (mean diagonal/off-diagonal similarity)."""
        i_vecs = self.imu_vectors(windows)
        v_vecs = self.video_vectors(clips_or_ids)
        t = ad.exp(self.align.t_prime)
        if kind == "sigmoid":
            loss = sigmoid_contrastive_loss(i_vecs, v_vecs, t, self.align.bias)
        elif kind == "softmax":
            loss = softmax_contrastive_loss(i_vecs, v_vecs, t)
        else:
            raise ConfigError(f"unknown alignment loss {kind!r}")
        sims = i_vecs.data @ v_vecs.data.T
        n = sims.shape[0]
        diag = float(np.trace(sims) / n)
        off = float((sims.sum() - np.trace(sims)) / (n * (n - 1))) if n > 1 else 0.0
        return loss, {"diag_sim": diag, "offdiag_sim": off, "diag_gap": diag - off}


PairLike = Union[tuple, "object"]


def _split_pairs(pairs: Sequence[PairLike]):
    """Accept (window, clip) tuples or items with window/clip/id attributes."""
    windows, clips, ids = [], [], []
    for k, item in enumerate(pairs):
        if isinstance(item, tuple):
            window, clip = item[0], item[1]
            item_id = getattr(clip, "source_id", "") or f"pair{k}"
        else:
            window, clip = item.window, item.clip
            item_id = getattr(item, "id", "") or f"pair{k}"
        windows.append(window)
        clips.append(clip)
        ids.append(item_id)
    return windows, clips, ids


class CrossModalAligner(BaseEstimator):
    """Trains the IMU and video encoders to agree on paired segments.

    fit() consumes aligned (window, clip) pairs; afterwards ``transform``
    maps windows to unit vectors in the shared space and ``encode_clips``
    does the same for clips.
    """

    def __init__(
        self,
        patch_config: PatchConfig = PatchConfig(),
        imu_config: EncoderConfig = EncoderConfig(),
        video_config: VideoEncoderConfig = VideoEncoderConfig(),
        proj_dim: int = 64,
        proj_hidden: Optional[int] = None,
        loss: str = "sigmoid",
        init_temperature: float = 10.0,
        init_bias: float = 10.0,
        epochs: int = 50,
        batch_size: int = 32,
        lr: float = 1e-4,
        weight_decay: float = 0.01,
        precomputed_embeddings: Optional[dict[str, np.ndarray]] = None,
        seed: int = 0,
        log_stream: Optional[TextIO] = None,
    ):
        self.patch_config = patch_config
        self.imu_config = imu_config
        self.video_config = video_config
        self.proj_dim = proj_dim
        self.proj_hidden = proj_hidden
        self.loss = loss
        self.init_temperature = init_temperature
        self.init_bias = init_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.precomputed_embeddings = precomputed_embeddings
        self.seed = seed
        self.log_stream = log_stream

        self.model_: Optional[AlignModel] = None
        self.history_: list[dict] = []

    def _build_model(self) -> AlignModel:
        rng = np.random.default_rng([self.seed, 303])
        imu = IMUEncoder(self.patch_config, self.imu_config, seed=self.seed)
        if self.precomputed_embeddings is not None:
            first = next(iter(self.precomputed_embeddings.values()), None)
            if first is None:
                raise ConfigError("precomputed_embeddings is empty")
            vid: Module = PrecomputedClipEmbedder(len(first), self.precomputed_embeddings)
        else:
            vid = VideoClipEncoder(self.video_config, seed=self.seed)
        head = AlignmentHead(
            self.imu_config.window_embedding_dim,
            vid.output_dim,
            self.proj_dim,
            rng,
            proj_hidden=self.proj_hidden,
            init_temperature=self.init_temperature,
            init_bias=self.init_bias,
        )
        return AlignModel(imu, vid, head)

    def fit(self, pairs: Sequence[PairLike]) -> "CrossModalAligner":
        windows, clips, ids = _split_pairs(pairs)
        model = self._build_model()
        self.model_ = model
        self.history_ = []
        if self.epochs == 0:
            return self

        win_arr = stack_windows(windows)
        precomputed = isinstance(model.vid, PrecomputedClipEmbedder)
        clip_arr = None if precomputed else stack_clips(clips)
        ids = list(ids)

        opt = AdamW(model.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        log = ProgressLog(self.log_stream)
        rng = np.random.default_rng([self.seed, 404])
        model.train()
        n = len(windows)
        for epoch in range(self.epochs):
            scale = epoch_lr_scale(self.epochs, epoch)
            opt.set_lr_scale(scale)
            lr_now = self.lr * scale
            total, count = 0.0, 0
            gaps = []
            for step, idx in enumerate(epoch_batches(n, self.batch_size, rng)):
                batch_windows = win_arr[idx]
                batch_clips = clip_arr[idx] if clip_arr is not None else [ids[i] for i in idx]
                opt.zero_grad()
                loss, stats = model.loss(batch_windows, batch_clips, kind=self.loss)
                ad.backward(loss)
                opt.step()
                value = loss.item()
                total += value * len(idx)
                count += len(idx)
                gaps.append(stats["diag_gap"])
                log.emit(
                    event="step",
                    epoch=epoch,
                    step=step,
                    loss=value,
                    lr=lr_now,
                    t=model.align.temperature,
                    b=float(model.align.bias.data),
                )
            record = {
                "epoch": epoch,
                "loss": total / count,
                "lr": lr_now,
                "t": model.align.temperature,
                "b": float(model.align.bias.data),
                "diag_gap": float(np.mean(gaps)),
            }
            self.history_.append(record)
            log.emit(event="epoch", **record)
        model.eval()
        return self

    # -- inference -------------------------------------------------------------

    def _encode_windows_raw(self, windows, chunk: int = 256) -> np.ndarray:
        self._check_fitted("model_")
        model = self.model_
        model.eval()
        arr = windows if isinstance(windows, np.ndarray) else stack_windows(list(windows))
        if arr.ndim == 2:
            arr = arr[None]
        outs = []
        with ad.no_grad():
            for start in range(0, len(arr), chunk):
                outs.append(model.imu.window_embedding(arr[start : start + chunk]).data)
        return np.concatenate(outs, axis=0)

    def transform(self, windows, projected: bool = True) -> np.ndarray:
        """Window embeddings: projected unit vectors, or the raw M*D pooled vectors."""
        raw = self._encode_windows_raw(windows)
        if not projected:
            return raw
        with ad.no_grad():
            return project_and_normalize(Tensor(raw), self.model_.align.imu_head).data

    def encode_clips(self, clips, projected: bool = True, chunk: int = 256) -> np.ndarray:
        self._check_fitted("model_")
        model = self.model_
        model.eval()
        if isinstance(model.vid, PrecomputedClipEmbedder):
            ids = [c if isinstance(c, str) else c.source_id for c in clips]
            with ad.no_grad():
                raw = model.vid.embed_ids(ids).data
        else:
            arr = clips if isinstance(clips, np.ndarray) else stack_clips(list(clips))
            if arr.ndim == 4:
                arr = arr[None]
            outs = []
            with ad.no_grad():
                for start in range(0, len(arr), chunk):
                    outs.append(model.vid(arr[start : start + chunk]).data)
            raw = np.concatenate(outs, axis=0)
        if not projected:
            return raw
        with ad.no_grad():
            return project_and_normalize(Tensor(raw), self.model_.align.vid_head).data
