"""Segmentation data: PPM/PGM datasets, a synthetic task generator, and
image-size statistics (resolution range ratio, area Gini coefficient)."""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, DatasetIOError
from .tensor import bilinear_matrix

log = logging.getLogger(__name__)

IMAGE_SUFFIX = ".img.ppm"
MASK_SUFFIX = ".mask.pgm"


@dataclass
class SampleRecord:
    image: np.ndarray  # [3, H, W] float64 in [0, 1]
    mask: np.ndarray  # [H, W] int64
    id: str

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class Dataset:
    samples: list[SampleRecord] = field(default_factory=list)
    num_classes: int | None = None
    errors: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def skipped(self) -> int:
        return len(self.errors)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def _check_areas(areas) -> np.ndarray:
    a = np.asarray(areas, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise DataError("area list is empty")
    if (a <= 0).any():
        raise DataError(f"areas must be positive, got minimum {a.min()}")
    return a


def resolution_range_ratio(areas) -> float:
    a = _check_areas(areas)
    return float(a.max() / a.min())


def gini_coefficient(areas) -> float:
    """Mean absolute pairwise area difference over twice the mean area.

    Uses the sorted identity sum_ij |A_i - A_j| = 2 * sum_i (2i - n + 1) A_(i).
    """
    a = np.sort(_check_areas(areas))
    n = a.size
    ranks = 2.0 * np.arange(n) - n + 1.0
    return float(2.0 * np.dot(ranks, a) / (2.0 * n * n * a.mean()))


@dataclass
class DatasetStats:
    n: int
    areas: list[float]
    r_range: float
    gini: float

    @property
    def mean_area(self) -> float:
        return float(np.mean(self.areas))

    def format(self) -> str:
        return f"n={self.n} r_range={self.r_range!r} gini={self.gini!r} mean_area={self.mean_area!r}"


def dataset_stats(areas) -> DatasetStats:
    a = _check_areas(areas)
    return DatasetStats(int(a.size), [float(x) for x in a], resolution_range_ratio(a), gini_coefficient(a))


def image_areas(directory) -> list[int]:
    """Pixel areas of every ``*.img.ppm`` image, read from headers only."""
    areas = []
    for path in sorted(Path(directory).glob(f"*{IMAGE_SUFFIX}")):
        try:
            with Image.open(path) as im:
                w, h = im.size
        except OSError as exc:
            raise DatasetIOError(f"cannot read {path}: {exc}") from exc
        areas.append(w * h)
    return areas


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

def class_palette(num_classes: int) -> np.ndarray:
    """[K, 3] RGB colours; class 0 is a dark background, others spread in hue."""
    pal = np.zeros((num_classes, 3))
    pal[0] = (0.1, 0.1, 0.1)
    for c in range(1, num_classes):
        pal[c] = colorsys.hsv_to_rgb((c - 1) / max(num_classes - 1, 1), 0.8, 0.9)
    return pal


def generate_synthetic(
    num_images: int,
    size: int | tuple[int, int],
    num_classes: int,
    rng: np.random.Generator,
    noise: float = 0.1,
    max_shapes: int = 3,
) -> Dataset:
    """Background class 0 plus random rectangles and ellipses of classes 1..K-1.

    Each shape spans at most a quarter of each side, so at most ``max_shapes``
    quarters of the image can be covered and background always survives.
    """
    if num_classes < 2:
        raise DataError(f"num_classes must be >= 2, got {num_classes}")
    H, W = (size, size) if isinstance(size, int) else tuple(size)
    pal = class_palette(num_classes)
    yy, xx = np.mgrid[0:H, 0:W]
    samples = []
    for idx in range(num_images):
        mask = np.zeros((H, W), dtype=np.int64)
        for _ in range(int(rng.integers(1, max_shapes + 1))):
            cls = int(rng.integers(1, num_classes))
            hy = int(rng.integers(max(H // 8, 1), max(H // 4, 1) + 1))
            hx = int(rng.integers(max(W // 8, 1), max(W // 4, 1) + 1))
            cy = int(rng.integers(0, H))
            cx = int(rng.integers(0, W))
            if rng.random() < 0.5:
                region = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
            else:
                region = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
            mask[region] = cls
        image = pal[mask].transpose(2, 0, 1)
        if noise > 0:
            image = image + noise * rng.standard_normal(image.shape)
        image = np.clip(image, 0.0, 1.0)
        samples.append(SampleRecord(image, mask, f"synth_{idx:05d}"))
    return Dataset(samples, num_classes)


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for s in dataset:
        if s.mask.max(initial=0) > 255:
            raise DataError(f"{s.id}: mask id {s.mask.max()} does not fit an 8-bit PGM")
        img = np.round(s.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        try:
            Image.fromarray(img, mode="RGB").save(out / f"{s.id}{IMAGE_SUFFIX}", format="PPM")
            Image.fromarray(s.mask.astype(np.uint8), mode="L").save(out / f"{s.id}{MASK_SUFFIX}", format="PPM")
        except OSError as exc:
            raise DatasetIOError(f"cannot write {out / s.id}: {exc}") from exc


def _read(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != mode:
                raise DataError(f"{path}: expected {mode} image, found {im.mode}")
            return np.asarray(im)
    except DataError:
        raise
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc


def load_dataset(directory, num_classes: int | None = None, ignore_index: int = 255,
                 strict: bool = False) -> Dataset:
    """Read ``<id>.img.ppm`` / ``<id>.mask.pgm`` pairs.

    Invalid pairs (size mismatch, out-of-range class id, missing mask) are
    skipped and their messages collected in ``Dataset.errors``; with
    ``strict`` the first one raises.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DatasetIOError(f"dataset directory {root} does not exist")
    ds = Dataset(num_classes=num_classes)
    for img_path in sorted(root.glob(f"*{IMAGE_SUFFIX}")):
        sid = img_path.name[: -len(IMAGE_SUFFIX)]
        mask_path = root / f"{sid}{MASK_SUFFIX}"
        try:
            if not mask_path.exists():
                raise DataError(f"{sid}: mask file {mask_path} missing")
            img = _read(img_path, "RGB")
            mask = _read(mask_path, "L").astype(np.int64)
            if img.shape[:2] != mask.shape:
                raise DataError(f"{sid}: image {img.shape[:2]} and mask {mask.shape} sizes differ")
            if num_classes is not None:
                bad = (mask >= num_classes) & (mask != ignore_index)
                if bad.any():
                    raise DataError(f"{sid}: mask contains class id {int(mask[bad][0])} >= {num_classes}")
        except DataError as exc:
            if strict:
                raise
            ds.errors.append(str(exc))
            continue
        image = img.astype(np.float64).transpose(2, 0, 1) / 255.0
        ds.samples.append(SampleRecord(image, mask, sid))
    if ds.errors:
        log.warning("skipped %d invalid samples in %s", len(ds.errors), root)
    return ds


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def letterbox(sample: SampleRecord, crop: int, ignore_index: int = 255):
    """Resize preserving aspect so the long side equals ``crop``, then pad.

    Image padding is zero, mask padding is ``ignore_index``. Images already at
    ``crop x crop`` are returned unchanged.
    """
    H, W = sample.mask.shape
    if (H, W) == (crop, crop):
        return sample.image, sample.mask
    s = crop / max(H, W)
    h, w = max(1, round(H * s)), max(1, round(W * s))
    ry, rx = bilinear_matrix(H, h), bilinear_matrix(W, w)
    image = np.einsum("yh,chw,xw->cyx", ry, sample.image, rx)
    yi = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    xi = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    mask = sample.mask[yi][:, xi]
    out_img = np.zeros((3, crop, crop))
    out_mask = np.full((crop, crop), ignore_index, dtype=np.int64)
    out_img[:, :h, :w] = image
    out_mask[:h, :w] = mask
    return out_img, out_mask


def make_batch(samples, crop: int, ignore_index: int = 255):
    imgs, masks = zip(*(letterbox(s, crop, ignore_index) for s in samples))
    return np.stack(imgs), np.stack(masks)
