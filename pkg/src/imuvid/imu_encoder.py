"""Channel-independent patch transformer over IMU windows.

Each of the 6 channels is patched and encoded independently through shared
weights; a learnable CLS token per channel provides the pooled window
representation (the 6 CLS outputs concatenated). A masked-patch
reconstruction objective supports unimodal pretraining.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .datatypes import NUM_CHANNELS, WINDOW_SAMPLES, IMUWindow, stack_windows
from .errors import ConfigError, InputError, UsageError
from .nn import Dropout, Linear, Module, TransformerStack


@dataclass(frozen=True)
class PatchConfig:
    """Patching geometry: context length L, patch length P, stride S.

    The padded patch count is N = floor((L - P)/S) + 2; the extra patch is
    realized by replicating the final sample S times.
    """

    context_length: int = WINDOW_SAMPLES
    patch_length: int = 16
    stride: int = 16

    def __post_init__(self):
        if self.patch_length > self.context_length:
            raise ConfigError(
                f"patch_length {self.patch_length} exceeds context_length {self.context_length}"
            )
        if self.stride < 1 or self.patch_length < 1:
            raise ConfigError("patch_length and stride must be positive")

    @property
    def num_patches(self) -> int:
        return (self.context_length - self.patch_length) // self.stride + 2


@dataclass(frozen=True)
class EncoderConfig:
    """Transformer dimensions for the IMU encoder."""

    model_dim: int = 64
    num_layers: int = 3
    num_heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.05
    channels: int = NUM_CHANNELS
    instance_norm: bool = False

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0 or self.ff_dim <= 0 or self.channels <= 0:
            raise ConfigError("encoder dimensions must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be nonnegative")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1): {self.dropout}")

    @property
    def window_embedding_dim(self) -> int:
        return self.channels * self.model_dim


def patchify(values: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Split per-channel series into patches, replicating the final value.

    ``values`` is (L, M) or (B, L, M); the result is (M, N, P) or (B, M, N, P)
    with channels handled independently.
    """
    values = np.asarray(values)
    single = values.ndim == 2
    if single:
        values = values[None]
    if values.shape[1] != cfg.context_length:
        raise InputError(
            f"expected context length {cfg.context_length}, got {values.shape[1]}"
        )
    x = values.transpose(0, 2, 1)  # (B, M, L)
    pad = np.repeat(x[:, :, -1:], cfg.stride, axis=2)
    padded = np.concatenate([x, pad], axis=2)
    n = cfg.num_patches
    patches = np.stack(
        [padded[:, :, i * cfg.stride : i * cfg.stride + cfg.patch_length] for i in range(n)],
        axis=2,
    )
    return patches[0] if single else patches


def sample_mask_indices(
    cfg: PatchConfig,
    mask_ratio: float,
    rng: np.random.Generator,
    batch: int,
    channels: int,
) -> np.ndarray:
    """Per (item, channel): ceil(mask_ratio*N) patch indices, uniform without replacement."""
    if not 0.0 < mask_ratio < 1.0:
        raise ConfigError(f"mask_ratio must lie in (0, 1): {mask_ratio}")
    n = cfg.num_patches
    k = math.ceil(mask_ratio * n)
    out = np.empty((batch, channels, k), dtype=np.int64)
    for b in range(batch):
        for m in range(channels):
            out[b, m] = rng.choice(n, size=k, replace=False)
    return out


WindowBatch = Union[np.ndarray, Sequence[IMUWindow], Tensor]


def _as_window_array(windows: WindowBatch, cfg: PatchConfig, channels: int):
    if isinstance(windows, Tensor):
        arr = windows
        shape = windows.shape
    else:
        if not isinstance(windows, np.ndarray):
            windows = stack_windows(list(windows))
        arr = np.asarray(windows, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        shape = arr.shape
    if len(shape) != 3 or shape[1] != cfg.context_length or shape[2] != channels:
        raise InputError(
            f"expected windows of shape (B, {cfg.context_length}, {channels}), got {shape}"
        )
    return arr if isinstance(arr, Tensor) else Tensor(arr)


class IMUEncoder(Module):
    """Patch transformer producing per-channel token sequences and a pooled embedding."""

    def __init__(
        self,
        patch_cfg: PatchConfig = PatchConfig(),
        cfg: EncoderConfig = EncoderConfig(),
        seed: int = 0,
    ):
        super().__init__()
        self.patch_cfg = patch_cfg
        self.cfg = cfg
        self.rng = np.random.default_rng([seed, 101])
        d, p, n = cfg.model_dim, patch_cfg.patch_length, patch_cfg.num_patches
        self.patch_proj = Linear(p, d, self.rng)
        self.pos_embed = Parameter(
            (0.02 * self.rng.standard_normal((n, d))).astype(np.float32), name="pos_embed"
        )
        self.cls_token = Parameter(
            (0.02 * self.rng.standard_normal(d)).astype(np.float32), name="cls_token"
        )
        self.mask_token = Parameter(
            (0.02 * self.rng.standard_normal(d)).astype(np.float32), name="mask_token"
        )
        self.blocks = TransformerStack(
            d, cfg.num_layers, cfg.num_heads, cfg.ff_dim, self.rng, dropout=cfg.dropout
        )
        self.embed_dropout = Dropout(cfg.dropout, self.rng)
        self.refresh_parameter_names()

    # -- token construction ---------------------------------------------------

    def _patchify_tensor(self, x: Tensor) -> Tensor:
        """Differentiable patching: (B, L, M) -> (B, M, N, P)."""
        cfg = self.patch_cfg
        b, l, m = x.shape
        xc = ad.transpose(x, (0, 2, 1))
        last = ad.getitem(xc, (slice(None), slice(None), slice(l - 1, l)))
        pad = ad.broadcast_to(last, (b, m, cfg.stride))
        padded = ad.concat([xc, pad], axis=2)
        pieces = []
        for i in range(cfg.num_patches):
            start = i * cfg.stride
            piece = ad.getitem(
                padded, (slice(None), slice(None), slice(start, start + cfg.patch_length))
            )
            pieces.append(ad.reshape(piece, (b, m, 1, cfg.patch_length)))
        return ad.concat(pieces, axis=2)

    def _instance_norm(self, x: Tensor) -> Tensor:
        mu = ad.tensor_mean(x, axis=1, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tensor_mean(ad.mul(centered, centered), axis=1, keepdims=True)
        return ad.div(centered, ad.add(ad.sqrt(var), 1e-8))

    def embed_patches(self, windows: WindowBatch) -> Tensor:
        """Project patches and attach positional + CLS embeddings: (B, M, N+1, D)."""
        x = _as_window_array(windows, self.patch_cfg, self.cfg.channels)
        if self.cfg.instance_norm:
            x = self._instance_norm(x)
        patches = self._patchify_tensor(x)
        b = patches.shape[0]
        tokens = ad.add(self.patch_proj(patches), self.pos_embed)
        cls = ad.reshape(self.cls_token, (1, 1, 1, self.cfg.model_dim))
        cls = ad.broadcast_to(cls, (b, self.cfg.channels, 1, self.cfg.model_dim))
        return ad.concat([cls, tokens], axis=2)

    def _run_blocks(self, tokens: Tensor) -> Tensor:
        b, m, t, d = tokens.shape
        folded = ad.reshape(tokens, (b * m, t, d))
        folded = self.embed_dropout(folded)
        out = self.blocks(folded)
        return ad.reshape(out, (b, m, t, d))

    def encode(self, windows: WindowBatch) -> Tensor:
        """Full forward pass: token sequences of shape (B, M, N+1, D)."""
        return self._run_blocks(self.embed_patches(windows))

    def window_embedding(self, windows: WindowBatch) -> Tensor:
        """Concatenate the M per-channel CLS outputs: (B, M*D)."""
        tokens = self.encode(windows)
        cls = ad.getitem(tokens, (slice(None), slice(None), 0, slice(None)))
        b = cls.shape[0]
        return ad.reshape(cls, (b, self.cfg.channels * self.cfg.model_dim))


class MaskedReconstructionModel(Module):
    """IMU encoder plus a linear head that reconstructs masked patches."""

    def __init__(self, encoder: IMUEncoder):
        super().__init__()
        self.imu = encoder
        self.recon = Linear(encoder.cfg.model_dim, encoder.patch_cfg.patch_length, encoder.rng)
        self.refresh_parameter_names()

    def loss(
        self,
        windows: WindowBatch,
        mask_ratio: float = 0.40,
        rng: Optional[np.random.Generator] = None,
        seed: Optional[int] = None,
    ) -> Tensor:
        """Mean squared error over masked patches only.

        Masked patches keep their positional embedding but their projected
        content is replaced by a learnable mask embedding.
        """
        enc = self.imu
        x = _as_window_array(windows, enc.patch_cfg, enc.cfg.channels)
        if rng is None:
            rng = np.random.default_rng(seed)
        idx = sample_mask_indices(
            enc.patch_cfg, mask_ratio, rng, x.shape[0], enc.cfg.channels
        )
        return self._loss_from_indices(x, idx)

    def _loss_from_indices(self, x: Tensor, mask_idx: np.ndarray) -> Tensor:
        enc = self.imu
        b, m = x.shape[0], enc.cfg.channels
        n, p, d = enc.patch_cfg.num_patches, enc.patch_cfg.patch_length, enc.cfg.model_dim

        mask = np.zeros((b, m, n, 1), dtype=np.float32)
        if mask_idx.size:
            bi = np.arange(b)[:, None, None]
            mi = np.arange(m)[None, :, None]
            mask[bi, mi, mask_idx, 0] = 1.0
        total_masked = int(mask.sum())
        if total_masked == 0:
            warnings.warn("no patches masked; reconstruction loss is 0 by convention",
                          RuntimeWarning)
            return Tensor(np.zeros((), dtype=np.float32))

        if enc.cfg.instance_norm:
            x = enc._instance_norm(x)
        patches = enc._patchify_tensor(x)
        content = enc.patch_proj(patches)
        mask_t = Tensor(mask)
        mask_vec = ad.reshape(enc.mask_token, (1, 1, 1, d))
        content = ad.add(
            ad.mul(content, ad.sub(Tensor(np.ones_like(mask)), mask_t)),
            ad.mul(ad.broadcast_to(mask_vec, (b, m, 1, d)), mask_t),
        )
        tokens = ad.add(content, enc.pos_embed)
        cls = ad.reshape(enc.cls_token, (1, 1, 1, d))
        cls = ad.broadcast_to(cls, (b, m, 1, d))
        tokens = ad.concat([cls, tokens], axis=2)
        out = enc._run_blocks(tokens)
        patch_tokens = ad.getitem(out, (slice(None), slice(None), slice(1, n + 1), slice(None)))
        recon = self.recon(patch_tokens)
        err = ad.sub(recon, patches.detach())
        sq = ad.mul(ad.mul(err, err), Tensor(mask))
        return ad.div(ad.tensor_sum(sq), float(total_masked * p))


class MaskedPretrainer:
    """Unimodal pretraining: reconstruct randomly masked patches.

    Same optimizer setup as the cross-modal loop (AdamW, per-epoch cosine
    decay); 40% of the patches in every channel are masked each step.
    """

    def __init__(
        self,
        patch_config: PatchConfig = PatchConfig(),
        imu_config: EncoderConfig = EncoderConfig(),
        mask_ratio: float = 0.40,
        epochs: int = 100,
        batch_size: int = 32,
        lr: float = 1e-4,
        weight_decay: float = 0.01,
        seed: int = 0,
        log_stream=None,
    ):
        self.patch_config = patch_config
        self.imu_config = imu_config
        self.mask_ratio = mask_ratio
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.log_stream = log_stream

        self.model_: Optional[MaskedReconstructionModel] = None
        self.history_: list[dict] = []

    @property
    def encoder_(self) -> IMUEncoder:
        if self.model_ is None:
            raise UsageError("MaskedPretrainer is not fitted yet; call fit first")
        return self.model_.imu

    def fit(self, windows) -> "MaskedPretrainer":
        from .optim import AdamW
        from .training import ProgressLog, epoch_batches, epoch_lr_scale

        if not isinstance(windows, np.ndarray):
            windows = stack_windows(list(windows))
        encoder = IMUEncoder(self.patch_config, self.imu_config, seed=self.seed)
        model = MaskedReconstructionModel(encoder)
        self.model_ = model
        self.history_ = []
        if self.epochs == 0:
            return self

        opt = AdamW(model.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        log = ProgressLog(self.log_stream)
        rng = np.random.default_rng([self.seed, 707])
        mask_rng = np.random.default_rng([self.seed, 808])
        model.train()
        n = len(windows)
        for epoch in range(self.epochs):
            scale = epoch_lr_scale(self.epochs, epoch)
            opt.set_lr_scale(scale)
            total, count = 0.0, 0
            for step, idx in enumerate(epoch_batches(n, self.batch_size, rng)):
                opt.zero_grad()
                loss = model.loss(windows[idx], mask_ratio=self.mask_ratio, rng=mask_rng)
                ad.backward(loss)
                opt.step()
                total += loss.item() * len(idx)
                count += len(idx)
                log.emit(
                    event="step", epoch=epoch, step=step,
                    loss=loss.item(), lr=self.lr * scale,
                )
            record = {"epoch": epoch, "loss": total / count, "lr": self.lr * scale}
            self.history_.append(record)
            log.emit(event="epoch", **record)
        model.eval()
        return self
