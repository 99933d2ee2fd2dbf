"""Cube/label ingestion, standardization, patch extraction and splitting.

Binary formats (all little-endian):

* cube  "HSIC" | u8 version=1 | u8 dtype (1 = float32) | u32 H | u32 W |
  u32 B | H*W*B float32, row-major over (row, col) with bands contiguous
  per pixel.
* labels  "HSIL" | u8 version=1 | u32 H | u32 W | H*W u16 class ids,
  0 = unlabeled.

Sidecar metadata and split assignments are JSON (see Sidecar and
SplitAssignment).  Pixels are addressed by linear index row * W + col.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    TruncatedFileError,
)

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"
FORMAT_VERSION = 1
DTYPE_F32 = 1
PARTS = ("train", "val", "test")


@dataclass
class HsiCube:
    """H x W x B radiance cube with optional fitted per-band statistics."""

    values: np.ndarray
    band_mean: Optional[np.ndarray] = None
    band_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DataError(f"cube must be H x W x B with positive extents, "
                            f"got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelMap:
    """H x W raster of class ids; 0 marks unlabeled pixels."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise DataError(f"label map must be 2-d, got shape {self.labels.shape}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max())

    def class_pixels(self, cls: int) -> np.ndarray:
        """Linear indices of pixels labeled *cls*, in row-major order."""
        return np.flatnonzero(self.labels.reshape(-1) == cls)


@dataclass
class Sidecar:
    """Class names (index 1..K) and a display palette of K RGB triples."""

    class_names: List[str]
    palette: List[Tuple[int, int, int]]

    def __post_init__(self):
        if len(self.palette) != len(self.class_names):
            raise DataError(
                f"palette has {len(self.palette)} entries for "
                f"{len(self.class_names)} classes")
        for rgb in self.palette:
            if len(rgb) != 3 or any(not 0 <= v <= 255 for v in rgb):
                raise DataError(f"bad palette entry {rgb!r}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def check_pair(cube: HsiCube, labels: LabelMap) -> None:
    if (cube.height, cube.width) != (labels.height, labels.width):
        raise DimensionMismatchError(
            f"cube is {cube.height}x{cube.width} but labels are "
            f"{labels.height}x{labels.width}")


# ---------------------------------------------------------------------------
# binary file formats


def save_cube(path, cube: HsiCube) -> None:
    """Write the HSIC format; values are stored as float32 by definition."""
    h, w, b = cube.values.shape
    payload = cube.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<BB", FORMAT_VERSION, DTYPE_F32))
        fh.write(struct.pack("<III", h, w, b))
        fh.write(payload)


def load_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CUBE_MAGIC:
        raise BadMagicError(f"not a cube file (magic {blob[:4]!r})")
    if len(blob) < 18:
        raise TruncatedFileError(f"cube header truncated ({len(blob)} bytes)")
    version, dtype = struct.unpack_from("<BB", blob, 4)
    if version != FORMAT_VERSION:
        raise BadMagicError(f"unsupported cube version {version}")
    if dtype != DTYPE_F32:
        raise BadMagicError(f"unsupported cube dtype code {dtype}")
    h, w, b = struct.unpack_from("<III", blob, 6)
    expected = 18 + h * w * b * 4
    if len(blob) != expected:
        raise TruncatedFileError(
            f"cube payload is {len(blob) - 18} bytes, expected {expected - 18}")
    values = np.frombuffer(blob, dtype="<f4", offset=18).reshape(h, w, b)
    return HsiCube(values=values.astype(np.float64))


def save_labels(path, labels: LabelMap) -> None:
    h, w = labels.labels.shape
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<II", h, w))
        fh.write(labels.labels.astype("<u2").tobytes())


def load_labels(path) -> LabelMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != LABEL_MAGIC:
        raise BadMagicError(f"not a label file (magic {blob[:4]!r})")
    if len(blob) < 13:
        raise TruncatedFileError(f"label header truncated ({len(blob)} bytes)")
    version, = struct.unpack_from("<B", blob, 4)
    if version != FORMAT_VERSION:
        raise BadMagicError(f"unsupported label version {version}")
    h, w = struct.unpack_from("<II", blob, 5)
    expected = 13 + h * w * 2
    if len(blob) != expected:
        raise TruncatedFileError(
            f"label payload is {len(blob) - 13} bytes, expected {expected - 13}")
    labels = np.frombuffer(blob, dtype="<u2", offset=13).reshape(h, w)
    return LabelMap(labels=labels.copy())


def save_sidecar(path, sidecar: Sidecar) -> None:
    doc = {"class_names": sidecar.class_names,
           "palette": [list(rgb) for rgb in sidecar.palette]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sidecar(path) -> Sidecar:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        names = list(doc["class_names"])
        palette = [tuple(int(v) for v in rgb) for rgb in doc["palette"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed sidecar {path}: {exc}") from exc
    return Sidecar(class_names=names, palette=palette)


def convert_raw(raw_path, dims: Sequence[int], out_path, kind: str = "cube",
                raw_dtype: str = "f4") -> None:
    """Ingest a headerless band-sequential array into HSIC/HSIL.

    A raw cube is ordered band-sequential ([B][H][W]); it is transposed to
    the bands-last pixel-interleaved layout the HSIC format uses.
    """
    dtype = {"f4": "<f4", "f8": "<f8", "u2": "<u2", "u1": "u1"}.get(raw_dtype)
    if dtype is None:
        raise ConfigError(f"unsupported raw dtype {raw_dtype!r}")
    raw = np.fromfile(raw_path, dtype=dtype)
    if kind == "cube":
        if len(dims) != 3:
            raise ConfigError(f"cube conversion needs dims H,W,B, got {dims}")
        h, w, b = dims
        if raw.size != h * w * b:
            raise DataError(
                f"raw file holds {raw.size} values, dims imply {h * w * b}")
        values = raw.reshape(b, h, w).transpose(1, 2, 0)
        save_cube(out_path, HsiCube(values=values.astype(np.float64)))
    elif kind == "labels":
        if len(dims) < 2:
            raise ConfigError(f"label conversion needs dims H,W, got {dims}")
        h, w = dims[0], dims[1]
        if raw.size != h * w:
            raise DataError(
                f"raw file holds {raw.size} values, dims imply {h * w}")
        save_labels(out_path, LabelMap(labels=raw.reshape(h, w).astype(np.uint16)))
    else:
        raise ConfigError(f"unknown conversion kind {kind!r}")


# ---------------------------------------------------------------------------
# standardization


def fit_band_stats(cube: HsiCube, train_indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-band mean/std over the TRAIN pixels only (no test leakage).

    Bands with (near-)zero spread fall back to std 1 with a warning, so a
    constant band standardizes to all zeros.
    """
    flat = cube.values.reshape(-1, cube.bands)
    pixels = flat[np.asarray(train_indices, dtype=np.int64)]
    if pixels.shape[0] < 1:
        raise DataError("cannot fit band statistics without training pixels")
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    degenerate = std < 1e-12
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} band(s) have zero spread over training "
            "pixels; using std=1 for them")
        std = np.where(degenerate, 1.0, std)
    return mean, std


def standardize(cube: HsiCube, mean: np.ndarray, std: np.ndarray) -> HsiCube:
    """Apply fitted statistics; returns a new cube carrying them."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (cube.bands,) or std.shape != (cube.bands,):
        raise DataError(
            f"statistics cover {mean.shape[0]} bands, cube has {cube.bands}")
    return HsiCube(values=(cube.values - mean) / std, band_mean=mean, band_std=std)


# ---------------------------------------------------------------------------
# patch extraction


def extract_patch(cube: HsiCube, row: int, col: int, size: int) -> np.ndarray:
    """A size x size x B x 1 window centered at (row, col), zero-filled
    where the window reaches outside the image."""
    if size % 2 == 0:
        raise ConfigError(f"patch size must be odd, got {size}")
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise DataError(f"patch center ({row}, {col}) outside "
                        f"{cube.height}x{cube.width} image")
    half = size // 2
    patch = np.zeros((size, size, cube.bands))
    r0, r1 = max(0, row - half), min(cube.height, row + half + 1)
    c0, c1 = max(0, col - half), min(cube.width, col + half + 1)
    patch[r0 - row + half:r1 - row + half, c0 - col + half:c1 - col + half] = \
        cube.values[r0:r1, c0:c1]
    return patch[..., np.newaxis]


def patch_batch(cube: HsiCube, indices: np.ndarray, size: int) -> np.ndarray:
    """Stack patches for linear pixel indices into [n, s, s, B, 1]."""
    rows, cols = np.divmod(np.asarray(indices, dtype=np.int64), cube.width)
    return np.stack([extract_patch(cube, int(r), int(c), size)
                     for r, c in zip(rows, cols)])


# ---------------------------------------------------------------------------
# splits


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class SplitAssignment:
    """Disjoint train/val/test pixel sets covering exactly the labeled pixels."""

    height: int
    width: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0
    fractions: Optional[Tuple[float, float]] = None
    counts: List[Dict] = field(default_factory=list)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def part(self, name: str) -> np.ndarray:
        if name not in PARTS:
            raise ConfigError(f"unknown split part {name!r}; use one of {PARTS}")
        return getattr(self, name)

    def validate(self, labels: LabelMap) -> None:
        """Check disjointness, exact coverage of labeled pixels, and that
        every class appears in every partition."""
        if (self.height, self.width) != (labels.height, labels.width):
            raise DimensionMismatchError(
                f"split is for {self.height}x{self.width}, labels are "
                f"{labels.height}x{labels.width}")
        flat = labels.labels.reshape(-1)
        all_assigned = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(all_assigned)) != len(all_assigned):
            raise DataError("split partitions overlap")
        labeled = np.flatnonzero(flat > 0)
        if not np.array_equal(np.sort(all_assigned), labeled):
            raise DataError("split does not cover exactly the labeled pixels")
        for cls in range(1, labels.num_classes + 1):
            for part in PARTS:
                if not np.any(flat[self.part(part)] == cls):
                    raise DataError(f"class {cls} has no {part} samples")

    def counts_table(self, labels: LabelMap) -> List[Dict]:
        flat = labels.labels.reshape(-1)
        table = []
        for cls in range(1, labels.num_classes + 1):
            row = {"class": cls}
            for part in PARTS:
                row[part] = int(np.sum(flat[self.part(part)] == cls))
            table.append(row)
        return table


def stratified_split(labels: LabelMap, f_train: float, f_val: float,
                     seed: int) -> SplitAssignment:
    """Per-class split: n_train = max(3, round(n_c * f_train)),
    n_val = max(1, round(n_c * f_val)), remainder test.

    Pixels of each class are shuffled by the seeded generator before
    assignment; the same seed reproduces the assignment exactly.
    """
    if not (0.0 < f_train and 0.0 < f_val and f_train + f_val < 1.0):
        raise ConfigError(
            f"fractions must be positive with f_train + f_val < 1, "
            f"got {f_train}, {f_val}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in range(1, labels.num_classes + 1):
        pixels = labels.class_pixels(cls)
        n = len(pixels)
        if n < 3:
            raise DataError(f"class {cls} has only {n} labeled pixels (< 3)")
        n_train = max(3, _round_half_up(n * f_train))
        n_val = max(1, _round_half_up(n * f_val))
        if n_train + n_val >= n:
            raise DataError(
                f"class {cls} with {n} pixels cannot fill train={n_train}, "
                f"val={n_val} and still keep a test sample")
        shuffled = pixels[rng.permutation(n)]
        train.append(shuffled[:n_train])
        val.append(shuffled[n_train:n_train + n_val])
        test.append(shuffled[n_train + n_val:])
    split = SplitAssignment(
        height=labels.height, width=labels.width,
        train=np.concatenate(train), val=np.concatenate(val),
        test=np.concatenate(test), seed=seed, fractions=(f_train, f_val))
    split.counts = split.counts_table(labels)
    split.validate(labels)
    return split


def split_from_counts(labels: LabelMap, counts: List[Dict], seed: int) -> SplitAssignment:
    """Materialize an assignment from per-class train/val/test counts.

    Counts must exactly cover each class's population in the provided label
    map; pixel membership is chosen by a seeded shuffle.
    """
    rng = np.random.default_rng(seed)
    by_class = {int(row["class"]): row for row in counts}
    train, val, test = [], [], []
    for cls in range(1, labels.num_classes + 1):
        if cls not in by_class:
            raise DataError(f"split file lists no counts for class {cls}")
        row = by_class[cls]
        n_train, n_val, n_test = (int(row[p]) for p in PARTS)
        if min(n_train, n_val, n_test) < 1:
            raise DataError(f"class {cls} would have an empty partition "
                            f"({n_train}/{n_val}/{n_test})")
        pixels = labels.class_pixels(cls)
        n = len(pixels)
        if n_train + n_val + n_test > n:
            raise DataError(
                f"class {cls} counts {n_train}+{n_val}+{n_test} exceed its "
                f"{n} labeled pixels")
        if n_train + n_val + n_test != n:
            raise DataError(
                f"class {cls} counts sum to {n_train + n_val + n_test} but the "
                f"label map has {n} pixels; partitions must cover the class")
        shuffled = pixels[rng.permutation(n)]
        train.append(shuffled[:n_train])
        val.append(shuffled[n_train:n_train + n_val])
        test.append(shuffled[n_train + n_val:])
    split = SplitAssignment(
        height=labels.height, width=labels.width,
        train=np.concatenate(train), val=np.concatenate(val),
        test=np.concatenate(test), seed=seed)
    split.counts = split.counts_table(labels)
    split.validate(labels)
    return split


def import_split(path, labels: LabelMap) -> SplitAssignment:
    """Load a split file: per-class counts or explicit pixel-index lists."""
    with open(path) as fh:
        doc = json.load(fh)
    seed = int(doc.get("seed", 0))
    if "classes" in doc:
        split = split_from_counts(labels, doc["classes"], seed)
    elif "indices" in doc:
        idx = doc["indices"]
        try:
            parts = {p: np.asarray(idx[p], dtype=np.int64) for p in PARTS}
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed split index lists: {exc}") from exc
        fractions = tuple(doc["fractions"]) if doc.get("fractions") else None
        split = SplitAssignment(
            height=labels.height, width=labels.width,
            train=parts["train"], val=parts["val"], test=parts["test"],
            seed=seed, fractions=fractions)
        split.counts = split.counts_table(labels)
        split.validate(labels)
    else:
        raise DataError(f"split file {path} has neither 'classes' nor 'indices'")
    return split


def export_split(path, split: SplitAssignment) -> None:
    """Write a split with explicit pixel indices (exactly reproducible)."""
    doc = {
        "seed": split.seed,
        "fractions": list(split.fractions) if split.fractions else None,
        "counts": split.counts,
        "indices": {p: split.part(p).tolist() for p in PARTS},
        "height": split.height,
        "width": split.width,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def make_batches(split: SplitAssignment, batch_size: int, seed: int,
                 epoch: int) -> List[np.ndarray]:
    """Per-epoch reshuffled TRAIN batches; the final short batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng((seed, epoch))
    order = split.train[rng.permutation(len(split.train))]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
