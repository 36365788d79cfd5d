"""Inertial-stream preprocessing and video frame selection.

The chain applied before any training or evaluation is: resample to 50 Hz,
median filter (kernel 5), per-channel z-score over the whole recording, then
segmentation into non-overlapping 250-sample windows. All steps are pure
functions over immutable inputs.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import replace
from typing import Optional

import numpy as np

from .base import BaseEstimator
from .datatypes import (
    CLIP_FRAMES,
    NUM_CHANNELS,
    TARGET_RATE_HZ,
    WINDOW_SAMPLES,
    IMUWindow,
    RawRecording,
    VideoClip,
)
from .errors import ConfigError, InputError

ZSCORE_EPS = 1e-8


def resample_to_50hz(rec: RawRecording) -> RawRecording:
    """Resample all channels to 50 Hz by linear interpolation.

    Output timestamps run from 0 to the recording duration in 20 ms steps, so
    duration is preserved to within one sample period. When downsampling by
    more than 2x, a 2-tap moving average is applied first as a crude
    anti-aliasing guard. A 50 Hz input is returned unchanged.
    """
    if rec.num_samples < 2:
        raise InputError("resampling requires at least 2 samples")
    if rec.sample_rate_hz == TARGET_RATE_HZ:
        return rec

    values = rec.values.astype(np.float64)
    if rec.sample_rate_hz > 2.0 * TARGET_RATE_HZ:
        smoothed = values.copy()
        smoothed[1:] = 0.5 * (values[1:] + values[:-1])
        values = smoothed

    src_t = np.arange(rec.num_samples) / rec.sample_rate_hz
    duration = src_t[-1]
    n_out = int(np.floor(duration * TARGET_RATE_HZ)) + 1
    dst_t = np.arange(n_out) / TARGET_RATE_HZ
    out = np.empty((n_out, rec.num_channels), dtype=np.float32)
    for ch in range(rec.num_channels):
        out[:, ch] = np.interp(dst_t, src_t, values[:, ch])

    label_track = rec.label_track
    if label_track is not None:
        nearest = np.clip(np.rint(dst_t * rec.sample_rate_hz).astype(int), 0, rec.num_samples - 1)
        label_track = label_track[nearest]
    return replace(rec, values=out, sample_rate_hz=TARGET_RATE_HZ, label_track=label_track)


def median_filter(rec: RawRecording, kernel: int = 5) -> RawRecording:
    """Per-channel sliding median with replicate padding at the edges."""
    if kernel % 2 == 0 or kernel < 1:
        raise ConfigError(f"median filter kernel must be odd and positive, got {kernel}")
    half = kernel // 2
    padded = np.pad(rec.values, ((half, half), (0, 0)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=0)
    out = np.median(windows, axis=-1).astype(np.float32)
    return replace(rec, values=out)


def zscore(rec: RawRecording) -> RawRecording:
    """Standardize each channel over the whole recording: (x - mean)/(std + 1e-8).

    Population standard deviation; a constant channel maps to zeros thanks to
    the epsilon guard.
    """
    mean = rec.values.mean(axis=0, dtype=np.float64)
    std = rec.values.std(axis=0, dtype=np.float64)
    out = ((rec.values - mean) / (std + ZSCORE_EPS)).astype(np.float32)
    return replace(rec, values=out)


def windowize(rec: RawRecording) -> list[IMUWindow]:
    """Cut a 50 Hz recording into disjoint 250-sample windows.

    The trailing remainder shorter than one window is dropped. Labels, when a
    per-sample track exists, are assigned by majority vote (ties broken by the
    smallest label).
    """
    if rec.sample_rate_hz != TARGET_RATE_HZ:
        raise InputError(
            f"windowize expects a {TARGET_RATE_HZ:g} Hz recording, got {rec.sample_rate_hz:g} Hz"
        )
    if rec.num_channels != NUM_CHANNELS:
        raise InputError(f"windowize expects {NUM_CHANNELS} channels, got {rec.num_channels}")
    n_windows = rec.num_samples // WINDOW_SAMPLES
    if n_windows == 0:
        warnings.warn(
            f"recording {rec.source_id!r} has {rec.num_samples} samples "
            f"(< {WINDOW_SAMPLES}); no windows emitted",
            RuntimeWarning,
        )
        return []
    windows = []
    for k in range(n_windows):
        start = k * WINDOW_SAMPLES
        stop = start + WINDOW_SAMPLES
        label = None
        if rec.label_track is not None:
            counts = Counter(rec.label_track[start:stop].tolist())
            # majority vote; ties resolved toward the smallest label
            label = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        windows.append(
            IMUWindow(
                values=rec.values[start:stop],
                label=label,
                source_id=f"{rec.source_id}:w{k}",
            )
        )
    return windows


def preprocess_recording(rec: RawRecording, median_kernel: int = 5) -> list[IMUWindow]:
    """Full chain: resample -> median filter -> z-score -> windowize."""
    return windowize(zscore(median_filter(resample_to_50hz(rec), kernel=median_kernel)))


def chunk_bounds(num_frames: int, num_chunks: int = CLIP_FRAMES) -> list[tuple[int, int]]:
    """Half-open index ranges [floor(i*F/n), floor((i+1)*F/n)) covering F frames."""
    return [
        (num_frames * i // num_chunks, num_frames * (i + 1) // num_chunks)
        for i in range(num_chunks)
    ]


def select_frame_indices(
    num_frames: int,
    mode: str = "random",
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> np.ndarray:
    """Pick one frame index per chunk of a segment's frames.

    ``random`` samples uniformly within each chunk; ``deterministic`` takes
    the middle frame of each chunk.
    """
    if num_frames < CLIP_FRAMES:
        raise InputError(f"segment has {num_frames} frames; need at least {CLIP_FRAMES}")
    if mode not in ("random", "deterministic"):
        raise ConfigError(f"unknown frame selection mode {mode!r}")
    bounds = chunk_bounds(num_frames)
    if mode == "deterministic":
        return np.array([lo + (hi - lo) // 2 for lo, hi in bounds], dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng(seed)
    return np.array([int(rng.integers(lo, hi)) for lo, hi in bounds], dtype=np.int64)


def select_frames(
    segment_frames: np.ndarray,
    mode: str = "random",
    seed: Optional[int] = None,
    frame_rate_hz: Optional[float] = None,
    source_id: str = "",
) -> VideoClip:
    """Reduce a (F, H, W, C) frame stack to a 10-frame clip via chunked selection."""
    segment_frames = np.asarray(segment_frames, dtype=np.float32)
    if segment_frames.ndim != 4:
        raise InputError(f"segment frames must be 4-d, got shape {segment_frames.shape}")
    idx = select_frame_indices(segment_frames.shape[0], mode=mode, seed=seed)
    times = idx / frame_rate_hz if frame_rate_hz else None
    return VideoClip(frames=segment_frames[idx], frame_times=times, source_id=source_id)


class IMUPreprocessor(BaseEstimator):
    """Stateless transformer wrapping the preprocessing chain.

    ``transform`` accepts a RawRecording or a sequence of them and returns the
    flat list of emitted windows.
    """

    def __init__(self, median_kernel: int = 5):
        self.median_kernel = median_kernel

    def fit(self, X=None, y=None) -> "IMUPreprocessor":
        return self

    def transform(self, X) -> list[IMUWindow]:
        recordings = [X] if isinstance(X, RawRecording) else list(X)
        windows: list[IMUWindow] = []
        for rec in recordings:
            windows.extend(preprocess_recording(rec, median_kernel=self.median_kernel))
        return windows

    def fit_transform(self, X, y=None) -> list[IMUWindow]:
        return self.fit(X, y).transform(X)
