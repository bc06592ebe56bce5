"""Dataset ingestion and image/CSV output.

Reads CIFAR-10 binary batches (3073-byte records: 1 label byte, then 1024
bytes per color plane, row-major), builds relabeled category subsets,
generates Gaussian noise images matched to dataset channel statistics, and
writes PPM/PGM images plus RFC-4180 CSV files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError, UsageError
from .seeds import substream

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")

_RECORD = 3073  # 1 label byte + 3 * 1024 pixel bytes


@dataclass
class LabeledImage:
    """One image: (3,H,W) float64 pixels in [0,1] before normalization.

    label is -1 for synthetic/unlabeled images (e.g. generated noise).
    """

    pixels: np.ndarray
    label: int
    source_id: str


@dataclass(frozen=True)
class DatasetStats:
    channel_mean: tuple
    channel_std: tuple

    def __post_init__(self):
        if len(self.channel_mean) != 3 or len(self.channel_std) != 3:
            raise UsageError("DatasetStats needs 3 channel means and 3 channel stds")
        if any(s <= 0 for s in self.channel_std):
            raise UsageError(f"channel stds must be strictly positive, got {self.channel_std}")


def load_cifar10(directory, split: str = "train") -> list[LabeledImage]:
    """Decode the standard binary batches under a directory.

    split="train" reads data_batch_*.bin (sorted), split="test" reads
    test_batch.bin. Pixel bytes map to [0,1] by /255.
    """
    directory = Path(directory)
    if split == "train":
        files = sorted(directory.glob("data_batch_*.bin"))
    elif split == "test":
        files = [directory / "test_batch.bin"]
    else:
        raise UsageError(f"split must be 'train' or 'test', got {split!r}")
    if not files or not all(f.exists() for f in files):
        raise DataFormatError(f"no CIFAR-10 {split} batches found under {directory}")
    images = []
    for f in files:
        raw = np.frombuffer(f.read_bytes(), dtype=np.uint8)
        if raw.size % _RECORD != 0:
            raise DataFormatError(
                f"{f}: size {raw.size} is not a multiple of {_RECORD}; "
                f"truncated record starts at byte offset {(raw.size // _RECORD) * _RECORD}")
        recs = raw.reshape(-1, _RECORD)
        labels = recs[:, 0]
        bad = np.nonzero(labels > 9)[0]
        if bad.size:
            i = int(bad[0])
            raise DataFormatError(
                f"{f}: label byte {int(labels[i])} > 9 at byte offset {i * _RECORD}")
        pixels = recs[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
        for i in range(len(recs)):
            images.append(LabeledImage(pixels=pixels[i], label=int(labels[i]),
                                       source_id=f"{f.name}:{i}"))
    return images


def subset(images, labels, relabel: dict) -> list[LabeledImage]:
    """Keep only the given labels, remapped through relabel to 0..k-1."""
    labels = set(labels)
    if set(relabel) != labels:
        missing = labels - set(relabel)
        extra = set(relabel) - labels
        parts = []
        if missing:
            parts.append(f"relabel misses kept labels {sorted(missing)}")
        if extra:
            parts.append(f"relabel covers dropped labels {sorted(extra)}")
        raise UsageError("; ".join(parts))
    if labels and sorted(relabel.values()) != list(range(len(labels))):
        raise UsageError(f"relabel values must be contiguous 0..{len(labels) - 1}, "
                         f"got {sorted(relabel.values())}")
    return [LabeledImage(im.pixels, relabel[im.label], im.source_id)
            for im in images if im.label in labels]


def compute_stats(images) -> DatasetStats:
    """Per-channel mean and std over a dataset (pre-normalization pixels)."""
    if not len(images):
        raise UsageError("compute_stats needs a non-empty dataset")
    acc = np.zeros(3)
    acc2 = np.zeros(3)
    count = 0
    for im in images:
        acc += im.pixels.reshape(3, -1).sum(axis=1)
        acc2 += (im.pixels.reshape(3, -1) ** 2).sum(axis=1)
        count += im.pixels.shape[1] * im.pixels.shape[2]
    mean = acc / count
    var = acc2 / count - mean ** 2
    return DatasetStats(channel_mean=tuple(mean), channel_std=tuple(np.sqrt(var)))


def normalize(pixels: np.ndarray, stats: DatasetStats) -> np.ndarray:
    m = np.asarray(stats.channel_mean).reshape(3, 1, 1)
    s = np.asarray(stats.channel_std).reshape(3, 1, 1)
    return (pixels - m) / s


def denormalize(pixels: np.ndarray, stats: DatasetStats) -> np.ndarray:
    m = np.asarray(stats.channel_mean).reshape(3, 1, 1)
    s = np.asarray(stats.channel_std).reshape(3, 1, 1)
    return pixels * s + m


def to_batch(images, stats: DatasetStats | None = None):
    """Stack a dataset into (X, y) arrays, normalizing when stats are given."""
    if not len(images):
        return np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=np.int64)
    x = np.stack([im.pixels for im in images]).astype(np.float64)
    y = np.array([im.label for im in images], dtype=np.int64)
    if stats is not None:
        m = np.asarray(stats.channel_mean).reshape(1, 3, 1, 1)
        s = np.asarray(stats.channel_std).reshape(1, 3, 1, 1)
        x = (x - m) / s
    return x, y


def gaussian_noise_images(stats: DatasetStats, n: int, seed: int,
                          shape=(32, 32)) -> list[LabeledImage]:
    """n Gaussian noise images with the dataset's channel mean/std, clamped to [0,1].

    Deterministic in (stats, n, seed, shape); labels are -1 (out of sample).
    """
    if n < 0:
        raise UsageError(f"n must be >= 0, got {n}")
    rng = substream(seed, "noise")
    h, w = shape
    m = np.asarray(stats.channel_mean).reshape(3, 1, 1)
    s = np.asarray(stats.channel_std).reshape(3, 1, 1)
    out = []
    for i in range(n):
        pix = np.clip(rng.normal(0.0, 1.0, (3, h, w)) * s + m, 0.0, 1.0)
        out.append(LabeledImage(pixels=pix, label=-1, source_id=f"noise:{seed}:{i}"))
    return out


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------


def _quantize(values: np.ndarray, normalize_range: bool) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise UsageError("image values must be finite")
    if normalize_range:
        lo, hi = v.min(), v.max()
        if hi == lo:
            return np.zeros(v.shape, dtype=np.uint8)  # degenerate range renders black
        v = (v - lo) / (hi - lo)
    else:
        v = np.clip(v, 0.0, 1.0)
    return np.round(v * 255.0).astype(np.uint8)


def write_ppm(pixels: np.ndarray, path, normalize_range: bool = False):
    """Binary P6, maxval 255. pixels is (3,H,W); set normalize_range to map
    [min,max] to [0,255], else values are clamped from [0,1]."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ShapeError(f"write_ppm wants (3,H,W), got {pixels.shape}")
    q = _quantize(pixels, normalize_range)
    h, w = q.shape[1], q.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.transpose(1, 2, 0).tobytes())


def write_pgm(gray: np.ndarray, path, normalize_range: bool = False):
    """Binary P5, maxval 255. gray is (H,W)."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ShapeError(f"write_pgm wants (H,W), got {gray.shape}")
    q = _quantize(gray, normalize_range)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def _read_pnm_header(buf: bytes, magic: bytes, path):
    if not buf.startswith(magic):
        raise DataFormatError(f"{path}: expected {magic.decode()} header")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":  # comment line
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h, pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file back to (3,H,W) float64 in [0,1]."""
    buf = Path(path).read_bytes()
    w, h, pos = _read_pnm_header(buf, b"P6", path)
    need = w * h * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise DataFormatError(f"{path}: payload has {len(payload)} bytes, need {need}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, pos = _read_pnm_header(buf, b"P5", path)
    need = w * h
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise DataFormatError(f"{path}: payload has {len(payload)} bytes, need {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_csv(path, header, rows):
    """RFC-4180 quoting, '\n' line endings (byte-stable across platforms)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        writer.writerows(rows)
