"""Binary file formats and the plain-text manifest.

All multi-byte integers are little-endian; all floats in files are IEEE-754
binary32 regardless of compute precision. Every reader validates declared
sizes against the actual byte length before touching payload data and
reports failures as FormatError with the offending byte offset.

Layouts:
  checkpoint  magic "IMUV", version u16, entry count u32, then per entry:
              name length u16, name bytes, dtype code u8 (0=f32, 1=f64,
              2=u8), ndim u8, dims u32 each, raw values. The entry named
              "__config__" holds a JSON config echo as u8 bytes.
  imu         magic "IMUW", n_channels u16, n_samples u32, sample_rate f32,
              then channel-major f32 data.
  clip        magic "CLIP", T u8, H u16, W u16, C u8, then frame-major f32
              data.
  embeddings  magic "EMBD", dim u32, count u32, then per record: id length
              u16, id bytes, dim f32 values.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datatypes import (
    CLIP_FRAMES,
    NUM_CHANNELS,
    TARGET_RATE_HZ,
    WINDOW_SAMPLES,
    IMUWindow,
    RawRecording,
    VideoClip,
)
from .errors import FormatError, InputError

MAGIC_CHECKPOINT = b"IMUV"
MAGIC_IMU = b"IMUW"
MAGIC_CLIP = b"CLIP"
MAGIC_EMBEDDING = b"EMBD"
CHECKPOINT_VERSION = 1
CONFIG_ENTRY = "__config__"

_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class _Reader:
    """Cursor over a fully loaded file; every failure carries its offset."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.offset = 0

    def fail(self, message: str, at: Optional[int] = None):
        raise FormatError(message, path=self.path, offset=self.offset if at is None else at)

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            self.fail(
                f"truncated file: need {n} bytes for {what}, "
                f"have {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        chunk = self.take(size, what)
        return struct.unpack(fmt, chunk)

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic), "magic")
        if got != magic:
            self.fail(f"bad magic {got!r}, expected {magic!r}", at=0)

    def expect_end(self):
        if self.offset != len(self.data):
            self.fail(
                f"trailing bytes: file is {len(self.data)} bytes but parsing "
                f"consumed {self.offset}"
            )

    def read_array(self, dtype: np.dtype, count: int, what: str) -> np.ndarray:
        raw = self.take(dtype.itemsize * count, what)
        return np.frombuffer(raw, dtype=dtype).copy()


def _read_file(path) -> bytes:
    return Path(path).read_bytes()


# -- checkpoint container -------------------------------------------------------


def write_checkpoint(path, entries: dict[str, np.ndarray], config: Optional[dict] = None) -> None:
    """Serialize named arrays (plus an optional JSON config echo entry)."""
    items = list(entries.items())
    if config is not None:
        blob = np.frombuffer(json.dumps(config, sort_keys=True).encode(), dtype=np.uint8)
        items.append((CONFIG_ENTRY, blob))
    out = bytearray()
    out += MAGIC_CHECKPOINT
    out += struct.pack("<HI", CHECKPOINT_VERSION, len(items))
    seen = set()
    for name, arr in items:
        if name in seen:
            raise InputError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if arr.ndim > 0:
            arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODE_BY_KIND:
            arr = arr.astype(np.float32)
        code = _CODE_BY_KIND[arr.dtype]
        name_bytes = name.encode()
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(bytes(out))


def read_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", Optional[dict]]:
    r = _Reader(_read_file(path), path)
    r.expect_magic(MAGIC_CHECKPOINT)
    (version,) = r.unpack("<H", "version")
    if version != CHECKPOINT_VERSION:
        r.fail(f"unsupported checkpoint version {version}", at=4)
    (count,) = r.unpack("<I", "entry count")
    entries: OrderedDict[str, np.ndarray] = OrderedDict()
    config = None
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "entry name").decode(errors="replace")
        code, ndim = r.unpack("<BB", "dtype/ndim")
        if code not in _DTYPE_BY_CODE:
            r.fail(f"unknown dtype code {code} for entry {name!r}")
        dims = []
        for _ in range(ndim):
            (d,) = r.unpack("<I", f"dimension of {name!r}")
            dims.append(d)
        total = int(np.prod(dims, dtype=np.int64)) if dims else 1
        dtype = _DTYPE_BY_CODE[code]
        arr = r.read_array(dtype, total, f"values of {name!r}").reshape(dims)
        if name in entries or (name == CONFIG_ENTRY and config is not None):
            r.fail(f"duplicate checkpoint entry {name!r}")
        if name == CONFIG_ENTRY:
            try:
                config = json.loads(arr.tobytes().decode())
            except (UnicodeDecodeError, json.JSONDecodeError):
                r.fail("config echo entry is not valid JSON")
        else:
            entries[name] = arr
    r.expect_end()
    return entries, config


# -- imu recordings ---------------------------------------------------------------


def write_imu_file(path, rec: RawRecording) -> None:
    values = np.asarray(rec.values, dtype="<f4")
    out = bytearray()
    out += MAGIC_IMU
    out += struct.pack("<HIf", values.shape[1], values.shape[0], float(rec.sample_rate_hz))
    out += np.ascontiguousarray(values.T).tobytes()  # channel-major
    Path(path).write_bytes(bytes(out))


def read_imu_file(path) -> RawRecording:
    r = _Reader(_read_file(path), path)
    r.expect_magic(MAGIC_IMU)
    n_channels, n_samples, rate = r.unpack("<HIf", "header")
    if n_channels == 0 or n_samples == 0:
        r.fail(f"empty recording declared ({n_channels} channels, {n_samples} samples)")
    if not np.isfinite(rate) or rate <= 0:
        r.fail(f"invalid sample rate {rate}")
    data = r.read_array(np.dtype("<f4"), n_channels * n_samples, "samples")
    r.expect_end()
    values = data.reshape(n_channels, n_samples).T.copy()
    return RawRecording(values=values, sample_rate_hz=float(rate), source_id=str(path))


def write_window_file(path, window: IMUWindow) -> None:
    rec = RawRecording(
        values=window.values, sample_rate_hz=TARGET_RATE_HZ, source_id=window.source_id
    )
    write_imu_file(path, rec)


def read_window_file(path) -> IMUWindow:
    rec = read_imu_file(path)
    if rec.values.shape != (WINDOW_SAMPLES, NUM_CHANNELS):
        raise InputError(
            f"{path}: expected a {WINDOW_SAMPLES}x{NUM_CHANNELS} window, "
            f"got {rec.values.shape}"
        )
    if rec.sample_rate_hz != TARGET_RATE_HZ:
        raise InputError(f"{path}: window files must be {TARGET_RATE_HZ:g} Hz")
    return IMUWindow(values=rec.values, source_id=str(path))


def write_imu_text(path, rec: RawRecording) -> None:
    """Delimited-text export: one row per sample, a rate comment up front."""
    lines = [f"# rate: {rec.sample_rate_hz:g}"]
    for row in rec.values:
        lines.append(",".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_imu_text(path, sample_rate_hz: Optional[float] = None) -> RawRecording:
    """Parse one-row-per-sample delimited text (comma or whitespace separated)."""
    rows = []
    rate = sample_rate_hz
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as err:
        raise FormatError(f"not valid UTF-8 text: {err}", path=path, offset=err.start) from err
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("rate:"):
                rate = float(body.split(":", 1)[1])
            continue
        parts = line.replace(",", " ").split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError as err:
            raise InputError(f"{path}:{lineno}: unparseable row: {line!r}") from err
    if not rows:
        raise InputError(f"{path}: no samples found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InputError(f"{path}: inconsistent column counts {sorted(widths)}")
    if rate is None:
        raise InputError(f"{path}: sample rate not given (no '# rate:' header)")
    return RawRecording(
        values=np.asarray(rows, dtype=np.float32), sample_rate_hz=rate, source_id=str(path)
    )


# -- clips ------------------------------------------------------------------------


def write_clip_file(path, clip: VideoClip) -> None:
    t, h, w, c = clip.frames.shape
    out = bytearray()
    out += MAGIC_CLIP
    out += struct.pack("<BHHB", t, h, w, c)
    out += np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_clip_file(path) -> VideoClip:
    r = _Reader(_read_file(path), path)
    r.expect_magic(MAGIC_CLIP)
    t, h, w, c = r.unpack("<BHHB", "header")
    if t != CLIP_FRAMES:
        r.fail(f"clip declares {t} frames, expected {CLIP_FRAMES}")
    if h == 0 or w == 0 or c == 0:
        r.fail(f"degenerate clip dimensions {t}x{h}x{w}x{c}")
    data = r.read_array(np.dtype("<f4"), t * h * w * c, "frames")
    r.expect_end()
    return VideoClip(frames=data.reshape(t, h, w, c), source_id=str(path))


# -- precomputed embeddings ---------------------------------------------------------


def write_embedding_file(path, dim: int, table: dict[str, np.ndarray]) -> None:
    out = bytearray()
    out += MAGIC_EMBEDDING
    out += struct.pack("<II", dim, len(table))
    for key, vec in table.items():
        vec = np.asarray(vec, dtype="<f4")
        if vec.shape != (dim,):
            raise InputError(f"embedding {key!r} has shape {vec.shape}, expected ({dim},)")
        key_bytes = key.encode()
        out += struct.pack("<H", len(key_bytes))
        out += key_bytes
        out += vec.tobytes()
    Path(path).write_bytes(bytes(out))


def read_embedding_file(path) -> tuple[int, "OrderedDict[str, np.ndarray]"]:
    r = _Reader(_read_file(path), path)
    r.expect_magic(MAGIC_EMBEDDING)
    dim, count = r.unpack("<II", "header")
    if dim == 0:
        r.fail("embedding dimension 0")
    table: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (key_len,) = r.unpack("<H", "id length")
        key = r.take(key_len, "id").decode(errors="replace")
        if key in table:
            r.fail(f"duplicate embedding id {key!r}")
        table[key] = r.read_array(np.dtype("<f4"), dim, f"vector of {key!r}")
    r.expect_end()
    return int(dim), table


# -- manifest -----------------------------------------------------------------------


MANIFEST_HEADER = "#imuvid-manifest\tv1"
_MISSING = "-"


@dataclass
class ManifestItem:
    id: str
    imu_path: str
    clip_path: Optional[str] = None
    label: Optional[str] = None
    split: str = "train"
    subject: Optional[str] = None


def write_manifest(path, classes: Sequence[str], items: Sequence[ManifestItem]) -> None:
    lines = [
        MANIFEST_HEADER,
        "#classes\t" + ",".join(classes),
        "#fields\tid\timu\tclip\tlabel\tsplit\tsubject",
    ]
    for it in items:
        lines.append(
            "\t".join(
                [
                    it.id,
                    it.imu_path,
                    it.clip_path or _MISSING,
                    it.label if it.label is not None else _MISSING,
                    it.split,
                    it.subject or _MISSING,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, validate_files: bool = True) -> tuple[list[str], list[ManifestItem]]:
    """Parse a manifest; items come back in file order."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except UnicodeDecodeError as err:
        raise FormatError(f"not valid UTF-8 text: {err}", path=path, offset=err.start) from err
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError("missing manifest header line", path=path, offset=0)
    classes: list[str] = []
    items: list[ManifestItem] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#classes\t"):
            classes = [c for c in line.split("\t", 1)[1].split(",") if c]
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise FormatError(
                f"line {lineno}: expected 6 tab-separated fields, got {len(parts)}",
                path=path,
            )
        item = ManifestItem(
            id=parts[0],
            imu_path=parts[1],
            clip_path=None if parts[2] == _MISSING else parts[2],
            label=None if parts[3] == _MISSING else parts[3],
            split=parts[4],
            subject=None if parts[5] == _MISSING else parts[5],
        )
        if item.id in seen_ids:
            raise FormatError(f"line {lineno}: duplicate item id {item.id!r}", path=path)
        seen_ids.add(item.id)
        if item.label is not None and item.label not in classes:
            raise FormatError(
                f"line {lineno}: label {item.label!r} not in declared classes {classes}",
                path=path,
            )
        if validate_files:
            imu_file = path.parent / item.imu_path
            if not imu_file.exists():
                raise InputError(f"manifest references missing file {imu_file}")
            if item.clip_path is not None and not (path.parent / item.clip_path).exists():
                raise InputError(
                    f"manifest references missing file {path.parent / item.clip_path}"
                )
        items.append(item)
    return classes, items
