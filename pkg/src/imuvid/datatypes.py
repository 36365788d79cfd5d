"""Core data containers shared across preprocessing, models, and storage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

TARGET_RATE_HZ = 50.0
WINDOW_SAMPLES = 250  # 5 seconds at 50 Hz
NUM_CHANNELS = 6  # accel x/y/z + gyro x/y/z
CLIP_FRAMES = 10

DEFAULT_UNITS = ("g", "g", "g", "rad/s", "rad/s", "rad/s")


@dataclass
class RawRecording:
    """A continuous 6-channel inertial stream at an arbitrary sample rate.

    ``values`` is (n_samples, 6); channel units are carried as metadata and
    never converted. ``label_track`` optionally labels every sample.
    """

    values: np.ndarray
    sample_rate_hz: float
    units: Sequence[str] = DEFAULT_UNITS
    subject_id: Optional[str] = None
    label_track: Optional[np.ndarray] = None
    source_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise InputError(f"recording values must be 2-d, got shape {self.values.shape}")
        if self.sample_rate_hz <= 0:
            raise InputError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.label_track is not None:
            self.label_track = np.asarray(self.label_track)
            if len(self.label_track) != len(self.values):
                raise InputError(
                    f"label track length {len(self.label_track)} != "
                    f"sample count {len(self.values)}"
                )

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return (self.num_samples - 1) / self.sample_rate_hz if self.num_samples else 0.0


@dataclass
class IMUWindow:
    """A fixed 250x6 preprocessed segment, the atomic model input."""

    values: np.ndarray
    label: Optional[int] = None
    source_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (WINDOW_SAMPLES, NUM_CHANNELS):
            raise InputError(
                f"window must be {WINDOW_SAMPLES}x{NUM_CHANNELS}, got {self.values.shape}"
            )
        if not np.isfinite(self.values).all():
            raise InputError(f"window {self.source_id!r} contains non-finite values")


@dataclass
class VideoClip:
    """Ten frames summarizing a 5-second segment, values in [0, 1]."""

    frames: np.ndarray
    frame_times: Optional[np.ndarray] = None
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[0] != CLIP_FRAMES:
            raise InputError(
                f"clip must have shape ({CLIP_FRAMES}, H, W, C), got {self.frames.shape}"
            )
        if self.frame_times is not None:
            self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
            if self.frame_times.shape != (CLIP_FRAMES,):
                raise InputError(f"frame_times must have shape ({CLIP_FRAMES},)")

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.frames.shape[1:]


def stack_windows(windows: Sequence[IMUWindow]) -> np.ndarray:
    """(B, 250, 6) float32 batch from a sequence of windows."""
    if len(windows) == 0:
        raise InputError("expected at least one window")
    return np.stack([w.values for w in windows]).astype(np.float32)


def stack_clips(clips: Sequence[VideoClip]) -> np.ndarray:
    """(B, 10, H, W, C) float32 batch; all clips must share a frame shape."""
    if len(clips) == 0:
        raise InputError("expected at least one clip")
    shapes = {c.frames.shape for c in clips}
    if len(shapes) != 1:
        raise InputError(f"clips have mixed frame shapes: {sorted(shapes)}")
    return np.stack([c.frames for c in clips]).astype(np.float32)
