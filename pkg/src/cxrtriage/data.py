"""Image ingestion, preprocessing, the dataset archive format, splitting,
and the synthetic corpus generator used by the acceptance suite.

Preprocessing is the single shared path for training and serving:
center-crop to square, bilinear resize to 90x90 (half-pixel centers),
channel conversion (Rec.601 luma down, replication up), quantize to 8-bit,
scale by 1/255. Archives store the quantized 8-bit pixels, so training
data and a served upload of the same file score identically.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DataFormatError, DecodeError, IngestError

ARCHIVE_MAGIC = b"CXRA1"
CLASS_NAMES = ("Normal", "Pneumonia", "Tuberculosis")
TARGET_SIDE = 90
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".pgm")
MIN_SOURCE_SIDE = 8

_LABEL_BY_NAME = {name.lower(): i for i, name in enumerate(CLASS_NAMES)}


def assign_label(class_dir_name: str) -> int:
    """Map a class directory name onto its label id (case-insensitive)."""
    key = class_dir_name.strip().lower()
    if key not in _LABEL_BY_NAME:
        raise IngestError(
            f"unknown class name {class_dir_name!r}; valid names are "
            f"{', '.join(CLASS_NAMES)}")
    return _LABEL_BY_NAME[key]


def label_name(label: int) -> str:
    if not 0 <= label < len(CLASS_NAMES):
        raise IngestError(f"label id {label} outside 0..{len(CLASS_NAMES) - 1}")
    return CLASS_NAMES[label]


# --- decoding --------------------------------------------------------------

_16BIT_MODES = ("I;16", "I;16B", "I;16L", "I;16N", "I")


def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG/PGM bytes to an 8-bit grid [H,W] or [H,W,3].

    16-bit grayscale sources are downscaled by 257 so full scale maps to
    255. Anything Pillow cannot parse raises DecodeError.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise DecodeError(f"decode failed: {exc}") from exc
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if mode in _16BIT_MODES:
        arr = np.asarray(img).astype(np.int64)
        return np.clip(arr // 257, 0, 255).astype(np.uint8)
    if mode == "RGB":
        return np.asarray(img, dtype=np.uint8)
    if mode in ("1", "LA"):
        return np.asarray(img.convert("L"), dtype=np.uint8)
    try:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise DecodeError(f"unsupported image mode {mode!r}: {exc}") from exc


# --- preprocessing ---------------------------------------------------------

def _axis_samples(src: int, dst: int):
    """Bilinear sampling points for one axis, half-pixel centers."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(np.float32)
    return lo, hi, frac


def _resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a single float32 [H,W] plane."""
    h, w = plane.shape
    ylo, yhi, fy = _axis_samples(h, out_h)
    xlo, xhi, fx = _axis_samples(w, out_w)
    rows = plane[ylo, :] * (1.0 - fy)[:, None] + plane[yhi, :] * fy[:, None]
    return rows[:, xlo] * (1.0 - fx) + rows[:, xhi] * fx


def _center_crop_square(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return grid[top:top + side, left:left + side]


def preprocess_to_u8(grid: np.ndarray, target_channels: int) -> np.ndarray:
    """Crop/resize/convert a decoded grid to quantized [C,90,90] uint8."""
    if target_channels not in (1, 3):
        raise ConfigError(f"target channels must be 1 or 3, got {target_channels}")
    if grid.ndim not in (2, 3) or (grid.ndim == 3 and grid.shape[2] != 3):
        raise DecodeError(f"expected [H,W] or [H,W,3] grid, got {grid.shape}")
    h, w = grid.shape[:2]
    if min(h, w) < MIN_SOURCE_SIDE:
        raise DecodeError(
            f"image {h}x{w} below minimum size "
            f"{MIN_SOURCE_SIDE}x{MIN_SOURCE_SIDE}")
    grid = _center_crop_square(grid).astype(np.float32)
    if grid.ndim == 2:
        planes = [_resize_bilinear(grid, TARGET_SIDE, TARGET_SIDE)]
    else:
        planes = [_resize_bilinear(grid[:, :, c], TARGET_SIDE, TARGET_SIDE)
                  for c in range(3)]
    if target_channels == 1 and len(planes) == 3:
        luma = (np.float32(0.299) * planes[0]
                + np.float32(0.587) * planes[1]
                + np.float32(0.114) * planes[2])
        planes = [luma]
    elif target_channels == 3 and len(planes) == 1:
        planes = [planes[0], planes[0], planes[0]]
    out = np.stack(planes)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def preprocess(grid: np.ndarray, target_channels: int) -> np.ndarray:
    """Full preprocessing to [C,90,90] float32 in [0,1]."""
    return preprocess_to_u8(grid, target_channels).astype(np.float32) / np.float32(255)


# --- archive ---------------------------------------------------------------

@dataclass(frozen=True)
class LabeledImage:
    """One preprocessed sample: unit-scaled pixels, class id, provenance."""

    pixels: np.ndarray  # float32 [C,90,90] in [0,1]
    label: int
    source_id: str

    @property
    def label_name(self) -> str:
        return CLASS_NAMES[self.label]


@dataclass
class DatasetArchive:
    """In-memory view of a .cxra file: labels, quantized pixels, manifest."""

    channels: int
    labels: np.ndarray               # uint8 [N]
    pixels: np.ndarray               # uint8 [N,C,H,W]
    source_ids: list = field(default_factory=list)
    height: int = TARGET_SIDE
    width: int = TARGET_SIDE

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        expect = (len(self.labels), self.channels, self.height, self.width)
        if self.pixels.shape != expect:
            raise DataFormatError(
                f"pixel block shape {self.pixels.shape} != {expect}")
        if np.any(self.labels >= len(CLASS_NAMES)):
            raise DataFormatError("label array contains ids outside 0..2")
        if len(self.source_ids) not in (0, len(self.labels)):
            raise DataFormatError(
                f"{len(self.source_ids)} source ids for {len(self.labels)} samples")

    @property
    def count(self) -> int:
        return int(len(self.labels))

    def class_counts(self) -> dict:
        return {name: int(np.sum(self.labels == i))
                for i, name in enumerate(CLASS_NAMES)}

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.labels.tobytes())
        h.update(np.ascontiguousarray(self.pixels).tobytes())
        return h.hexdigest()

    def to_float(self) -> np.ndarray:
        """Pixels as float32 [N,C,H,W] in [0,1]."""
        return self.pixels.astype(np.float32) / np.float32(255)

    def sample(self, index: int) -> LabeledImage:
        if not 0 <= index < self.count:
            raise DataFormatError(
                f"sample index {index} outside 0..{self.count - 1}")
        source = self.source_ids[index] if self.source_ids else str(index)
        return LabeledImage(
            pixels=self.pixels[index].astype(np.float32) / np.float32(255),
            label=int(self.labels[index]), source_id=source)


def write_archive(archive: DatasetArchive, path: str) -> None:
    manifest = {
        "class_counts": archive.class_counts(),
        "content_hash": archive.content_hash(),
        "source_ids": list(archive.source_ids),
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True,
                                separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<IBHH", archive.count, archive.channels,
                            archive.width, archive.height))
        f.write(archive.labels.tobytes())
        f.write(np.ascontiguousarray(archive.pixels).tobytes())
        f.write(struct.pack("<I", len(manifest_bytes)))
        f.write(manifest_bytes)


def read_archive(path: str, verify_hash: bool = True) -> DatasetArchive:
    with open(path, "rb") as f:
        blob = f.read()
    fixed = len(ARCHIVE_MAGIC) + 9
    if len(blob) < fixed or blob[:5] != ARCHIVE_MAGIC:
        raise DataFormatError(
            f"bad magic: expected {ARCHIVE_MAGIC!r}, got {blob[:5]!r}")
    count, channels, width, height = struct.unpack("<IBHH", blob[5:fixed])
    pixel_bytes = count * channels * height * width
    need = fixed + count + pixel_bytes + 4
    if len(blob) < need:
        raise DataFormatError(
            f"length mismatch: file has {len(blob)} bytes, sections need "
            f"at least {need}")
    labels = np.frombuffer(blob, dtype=np.uint8, count=count, offset=fixed)
    pixels = np.frombuffer(blob, dtype=np.uint8, count=pixel_bytes,
                           offset=fixed + count)
    pixels = pixels.reshape(count, channels, height, width).copy()
    moff = fixed + count + pixel_bytes
    (manifest_len,) = struct.unpack("<I", blob[moff:moff + 4])
    manifest_bytes = blob[moff + 4:moff + 4 + manifest_len]
    if len(manifest_bytes) != manifest_len:
        raise DataFormatError(
            f"length mismatch: manifest declares {manifest_len} bytes, "
            f"file holds {len(manifest_bytes)}")
    try:
        manifest = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable manifest: {exc}") from exc
    archive = DatasetArchive(channels=channels, labels=labels.copy(),
                             pixels=pixels,
                             source_ids=list(manifest.get("source_ids", [])),
                             height=height, width=width)
    if verify_hash:
        actual = archive.content_hash()
        declared = manifest.get("content_hash")
        if declared != actual:
            raise DataFormatError(
                f"content hash check failed: manifest says {declared}, "
                f"payload hashes to {actual}")
    declared_counts = manifest.get("class_counts", {})
    if declared_counts and declared_counts != archive.class_counts():
        raise DataFormatError(
            f"class counts disagree: manifest {declared_counts}, "
            f"labels {archive.class_counts()}")
    return archive


# --- ingestion -------------------------------------------------------------

def ingest(root_dir: str, channels: int = 1) -> tuple:
    """Walk `<root>/<ClassName>/*` and build an archive plus a report.

    File order is lexicographic by relative path, so the same tree always
    produces byte-identical archives. Decode failures are recorded in the
    report and skipped.
    """
    from pathlib import Path

    root = Path(root_dir)
    if not root.is_dir():
        raise IngestError(f"ingest root {root_dir!r} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()),
                        key=lambda d: d.name)
    if not class_dirs:
        raise IngestError(f"ingest root {root_dir!r} has no class directories")
    entries = []  # (relative posix path, label, absolute path)
    for d in class_dirs:
        label = assign_label(d.name)
        for p in d.iterdir():
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
                entries.append((p.relative_to(root).as_posix(), label, p))
    entries.sort(key=lambda e: e[0])
    labels, planes, source_ids, failures = [], [], [], []
    for rel, label, p in entries:
        try:
            grid = decode_image(p.read_bytes())
            planes.append(preprocess_to_u8(grid, channels))
        except (DecodeError, OSError) as exc:
            failures.append({"path": rel, "error": str(exc)})
            continue
        labels.append(label)
        source_ids.append(rel)
    pixels = (np.stack(planes) if planes
              else np.zeros((0, channels, TARGET_SIDE, TARGET_SIDE), np.uint8))
    archive = DatasetArchive(channels=channels,
                             labels=np.array(labels, dtype=np.uint8),
                             pixels=pixels, source_ids=source_ids)
    counts = archive.class_counts()
    warnings = [f"class directory {d.name!r} contributed no decodable images"
                for d in class_dirs if counts[CLASS_NAMES[assign_label(d.name)]] == 0]
    report = {
        "root": str(root),
        "channels": channels,
        "counts": counts,
        "total": archive.count,
        "failures": failures,
        "warnings": warnings,
        "content_hash": archive.content_hash(),
    }
    return archive, report


# --- splitting -------------------------------------------------------------

@dataclass
class SplitPlan:
    """Disjoint, exhaustive train/validation index partition."""

    seed: int
    val_fraction: float
    train_indices: np.ndarray
    val_indices: np.ndarray
    stratified: bool = False

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.val_indices = np.asarray(self.val_indices, dtype=np.int64)


def split(archive, val_fraction: float = 0.2, seed: int = 0,
          stratified: bool = False) -> SplitPlan:
    """Seeded shuffle; the last floor(val_fraction * N) indices become the
    validation set. Stratified mode keeps per-class ratios within one
    sample while producing exactly the same validation size."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(
            f"val_fraction must be strictly inside (0,1), got {val_fraction}")
    n = archive if isinstance(archive, int) else archive.count
    n_val = int(np.floor(val_fraction * n))
    if n_val < 1 or n - n_val < 1:
        raise ConfigError(
            f"split of {n} samples at fraction {val_fraction} leaves an "
            f"empty side (val={n_val})")
    rng = np.random.Generator(np.random.PCG64(seed))
    if not stratified:
        perm = rng.permutation(n)
        return SplitPlan(seed, val_fraction, perm[:n - n_val], perm[n - n_val:])
    if isinstance(archive, int):
        raise ConfigError("stratified split needs an archive with labels")
    labels = archive.labels
    per_class = []
    for c in range(len(CLASS_NAMES)):
        idx = np.flatnonzero(labels == c)
        per_class.append(rng.permutation(idx))
    quota = [val_fraction * len(idx) for idx in per_class]
    take = [int(np.floor(q)) for q in quota]
    remainders = np.array([q - t for q, t in zip(quota, take)])
    for c in np.argsort(-remainders)[:n_val - sum(take)]:
        take[int(c)] += 1
    val_parts = [idx[:t] for idx, t in zip(per_class, take)]
    train_parts = [idx[t:] for idx, t in zip(per_class, take)]
    val = rng.permutation(np.concatenate(val_parts))
    train = rng.permutation(np.concatenate(train_parts))
    return SplitPlan(seed, val_fraction, train, val, stratified=True)


# --- synthetic corpus ------------------------------------------------------

# Canonical feature positions keep the classes compact in pixel space so a
# nearest-neighbor baseline can verify separability before any training.
_BLOTCH_CENTERS = ((33, 58), (57, 55), (26, 44), (64, 47), (45, 62))
_NODULE_CENTERS = ((27, 25), (38, 20), (53, 22), (63, 28))


def _ellipse_bump(xx, yy, cx, cy, rx, ry):
    m = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    return np.exp(-m * m).astype(np.float32)


def _synth_canvas(rng, label: int) -> np.ndarray:
    side = TARGET_SIDE
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32)
    canvas = np.full((side, side), 0.10, dtype=np.float32)
    canvas += np.float32(0.02 * rng.normal())
    for direction in (-1.0, 1.0):
        cx = 45.0 + direction * (19.0 + rng.normal())
        cy = 48.0 + rng.normal()
        rx = 12.5 + 0.6 * rng.normal()
        ry = 24.0 + rng.normal()
        amp = 0.50 + 0.03 * rng.normal()
        canvas += np.float32(amp) * _ellipse_bump(xx, yy, cx, cy, rx, ry)
    if label == 1:
        # blotchy high-frequency patches over the lung fields
        for bx, by in _BLOTCH_CENTERS:
            cx = bx + rng.normal()
            cy = by + rng.normal()
            r = 7.0 + rng.uniform(-1.0, 1.0)
            d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (r * r)
            mask = np.exp(-d2 * d2).astype(np.float32)
            speckle = rng.uniform(-1.0, 1.0, (side, side)).astype(np.float32)
            canvas += mask * (np.float32(0.22) + np.float32(0.25) * speckle)
    elif label == 2:
        # small bright nodules in the upper field
        for bx, by in _NODULE_CENTERS:
            cx = bx + 1.5 * rng.normal()
            cy = by + 1.5 * rng.normal()
            sigma = 2.6 + 0.3 * rng.normal()
            amp = 0.45 + 0.05 * rng.normal()
            d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma)
            canvas += np.float32(amp) * np.exp(-d2).astype(np.float32)
    canvas += rng.normal(0.0, 0.05, (side, side)).astype(np.float32)
    return canvas


def synthesize_dataset(n_per_class: int, seed: int = 0,
                       channels: int = 1) -> DatasetArchive:
    """Deterministic three-class synthetic archive (lung-like ellipses,
    blotch texture for class 1, upper-field nodules for class 2)."""
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    rng = np.random.Generator(np.random.PCG64(seed))
    labels, pixels, source_ids = [], [], []
    for label in range(len(CLASS_NAMES)):
        for i in range(n_per_class):
            canvas = _synth_canvas(rng, label)
            plane = np.clip(np.rint(np.clip(canvas, 0.0, 1.0) * 255), 0, 255)
            plane = plane.astype(np.uint8)
            sample = np.stack([plane] * channels)
            labels.append(label)
            pixels.append(sample)
            source_ids.append(f"synth/{CLASS_NAMES[label]}/{i:05d}")
    return DatasetArchive(channels=channels,
                          labels=np.array(labels, dtype=np.uint8),
                          pixels=np.stack(pixels), source_ids=source_ids)
