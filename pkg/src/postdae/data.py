"""Dataset ingestion: JSRT raw images, masks, manifests, splits and a synthetic generator."""
from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.transform import resize

from .errors import (
    BadFileSize,
    EmptyManifest,
    InvalidConfig,
    InvalidSpec,
    NotSquare,
    ValueOutOfRange,
)
from .masks import as_mask, count_components, read_mask_png, write_mask_png

log = logging.getLogger(__name__)

JSRT_SIZE = 2048
JSRT_SPACING = 0.175  # mm / pixel
JSRT_MAX = 4095


def dataset_root(root=None) -> Path:
    """``root`` if given, else ``$DATASET_ROOT``, else the working directory."""
    return Path(root if root is not None else os.environ.get("DATASET_ROOT", "."))


# ---------------------------------------------------------------- manifests

@dataclass
class ManifestEntry:
    image_id: str
    image_path: str
    mask_path: str
    provenance: str | None = None


@dataclass
class DatasetManifest:
    """Image/mask pairs with paths relative to ``root``."""

    entries: list[ManifestEntry]
    spacing: float
    source: Literal["jsrt", "synthetic", "external"] = "external"
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        self.entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(**e)
                        for e in self.entries]
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidConfig("manifest image_ids are not unique")
        if not self.spacing > 0:
            raise InvalidConfig("spacing must be > 0")
        if self.source not in ("jsrt", "synthetic", "external"):
            raise InvalidConfig(f"unknown manifest source {self.source!r}")

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def subset(self, ids) -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest([e for e in self.entries if e.image_id in wanted],
                               self.spacing, self.source, self.root)

    def resolve(self, rel: str) -> Path:
        return dataset_root(self.root) / rel

    def check_files(self) -> None:
        for e in self.entries:
            for rel in (e.image_path, e.mask_path):
                if not self.resolve(rel).exists():
                    raise FileNotFoundError(f"{e.image_id}: missing {self.resolve(rel)}")

    def load_mask(self, entry: ManifestEntry) -> np.ndarray:
        return read_mask_png(self.resolve(entry.mask_path))

    def load_image(self, entry: ManifestEntry, invert: bool = True) -> np.ndarray:
        path = self.resolve(entry.image_path)
        if path.suffix.upper() == ".IMG":
            return load_jsrt_image(path, invert=invert)
        return read_gray_png(path)

    def to_json(self) -> str:
        data = {
            "source": self.source,
            "spacing": self.spacing,
            "entries": [asdict(e) for e in self.entries],
        }
        return json.dumps(data, indent=2)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path, root=None, check: bool = True) -> "DatasetManifest":
        """Read a manifest; ``root`` defaults to ``$DATASET_ROOT`` then the manifest's folder."""
        path = Path(path)
        data = json.loads(path.read_text())
        if root is None:
            root = os.environ.get("DATASET_ROOT", path.parent)
        manifest = cls(data["entries"], data["spacing"], data.get("source", "external"), Path(root))
        if check:
            manifest.check_files()
        return manifest


def read_gray_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def write_gray_png(image, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


# ---------------------------------------------------------------- JSRT

def decode_jsrt_raw(raw: bytes, size: int = JSRT_SIZE, clamp: bool = False) -> np.ndarray:
    """Headerless big-endian uint16 raster -> (size, size) uint16 array."""
    expected = size * size * 2
    if len(raw) != expected:
        raise BadFileSize(f"expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype=">u2").reshape(size, size).astype(np.uint16)
    if values.max(initial=0) > JSRT_MAX:
        if not clamp:
            raise ValueOutOfRange(f"raw value {values.max()} exceeds {JSRT_MAX}")
        warnings.warn(f"clamping raw values above {JSRT_MAX}", stacklevel=2)
        values = np.minimum(values, JSRT_MAX)
    return values


def encode_jsrt_raw(values: np.ndarray) -> bytes:
    return np.asarray(values, dtype=">u2").tobytes()


def load_jsrt_image(path, invert: bool = True, clamp: bool = False,
                    size: int = JSRT_SIZE) -> np.ndarray:
    """Load a JSRT ``.IMG`` file as a float image in [0, 1].

    With ``invert`` (default) raw values ``v`` become ``4095 - v`` before scaling.
    """
    values = decode_jsrt_raw(Path(path).read_bytes(), size, clamp).astype(np.float64)
    if invert:
        values = JSRT_MAX - values
    return values / JSRT_MAX


# ---------------------------------------------------------------- resizing

def resize_image(image, size: int = 1024, spacing: float | None = None):
    """Bilinear (anti-aliased when shrinking) resize of a square gray image.

    Returns ``(resized, new_spacing)``; ``new_spacing`` is None if ``spacing`` is.
    """
    image = np.asarray(image, dtype=np.float64)
    _require_square(image)
    n = image.shape[0]
    if n == size:
        out = image.copy()
    elif n % size == 0:
        k = n // size
        out = image.reshape(size, k, size, k).mean(axis=(1, 3))
    else:
        out = resize(image, (size, size), order=1, anti_aliasing=size < n,
                     preserve_range=True, mode="edge")
    return out, (None if spacing is None else spacing * n / size)


def resize_mask(mask, size: int = 1024, spacing: float | None = None):
    """Nearest-neighbour resize of a square mask (pixel-centre sampling)."""
    mask = as_mask(mask)
    _require_square(mask)
    n = mask.shape[0]
    idx = np.minimum(((np.arange(size) + 0.5) * n / size).astype(int), n - 1)
    return mask[np.ix_(idx, idx)], (None if spacing is None else spacing * n / size)


def resize_to(array, size: int = 1024, spacing: float | None = None):
    """Dispatch on dtype: bool arrays are masks, everything else is an image."""
    if np.asarray(array).dtype == bool:
        return resize_mask(array, size, spacing)
    return resize_image(array, size, spacing)


def _require_square(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare(f"expected a square 2-D array, got {a.shape}")


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise InvalidConfig(f"split fractions must be >= 0 and sum to 1, got {fracs}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        """Floor of each fraction, leftovers go to train."""
        val = math.floor(n * self.val_frac + 1e-9)
        test = math.floor(n * self.test_frac + 1e-9)
        return n - val - test, val, test


def split(manifest: DatasetManifest, spec: SplitSpec | None = None):
    """Shuffle deterministically and cut into (train, val, test) manifests."""
    spec = spec or SplitSpec()
    if len(manifest) == 0:
        raise EmptyManifest("cannot split an empty manifest")
    ids = sorted(manifest.ids)
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = spec.sizes(len(ids))
    folds = (shuffled[:n_train], shuffled[n_train : n_train + n_val],
             shuffled[n_train + n_val :])
    return tuple(manifest.subset(f) for f in folds)


# ---------------------------------------------------------------- synthetic data

def _blob(shape, center, axes, angle, coeffs, phases) -> np.ndarray:
    """Star-shaped blob: an ellipse whose radius is modulated by a few harmonics."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    dy, dx = yy - center[0], xx - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = (c * dy + s * dx) / axes[0]
    v = (-s * dy + c * dx) / axes[1]
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    radius = np.ones_like(rho)
    for k, (a, phi) in enumerate(zip(coeffs, phases), start=2):
        radius += a * np.cos(k * theta + phi)
    return rho <= radius


def synthetic_mask(size: int, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """Two disjoint lung-like blobs, left and right of the midline."""
    for _ in range(max_tries):
        mask = np.zeros((size, size), dtype=bool)
        for side in (-1, 1):
            center = (size * rng.uniform(0.45, 0.55),
                      size * (0.5 + side * rng.uniform(0.19, 0.24)))
            axes = (size * rng.uniform(0.24, 0.32), size * rng.uniform(0.10, 0.14))
            angle = side * rng.uniform(-0.05, 0.2)
            coeffs = rng.uniform(0.0, 0.08, size=3)
            phases = rng.uniform(0, 2 * math.pi, size=3)
            mask |= _blob(mask.shape, center, axes, angle, coeffs, phases)
        fraction = mask.mean()
        touches_edge = mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()
        if count_components(mask) == 2 and 0.05 <= fraction <= 0.6 and not touches_edge:
            return mask
    raise RuntimeError("could not draw a valid synthetic mask")


def synthetic_image(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gray image in [0, 1]: fine-grained dark texture inside, smooth bright outside.

    A few dark distractor patches with a smoother texture are placed outside the
    mask so that intensity-only classifiers make plausible mistakes.
    """
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    shading = 0.08 * (yy - 0.5) + 0.04 * rng.standard_normal() * (xx - 0.5)
    outside = 0.68 + 0.06 * ndimage.gaussian_filter(rng.standard_normal((h, w)), 3) * 3
    inside = 0.32 + 0.09 * rng.standard_normal((h, w))
    image = np.where(mask, inside, outside) + shading
    for _ in range(int(rng.integers(0, 3))):
        cy, cx = rng.uniform(0.1, 0.9) * h, rng.uniform(0.05, 0.95) * w
        r = rng.uniform(0.03, 0.07) * min(h, w)
        patch = ((np.mgrid[0:h, 0:w][0] - cy) ** 2 + (np.mgrid[0:h, 0:w][1] - cx) ** 2) <= r * r
        patch &= ~ndimage.binary_dilation(mask, iterations=2)
        smooth = 0.42 + 0.05 * ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.5) * 2
        image = np.where(patch, smooth, image)
    return np.clip(image, 0.0, 1.0)


def synthetic_samples(count: int, size: int = 128, seed: int = 0
                      ) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
    """Yield ``(image_id, image, mask)``; sample ``i`` depends only on ``(seed, i)``."""
    if size % 32:
        raise InvalidSpec(f"size must be divisible by 32, got {size}")
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        mask = synthetic_mask(size, rng)
        yield f"syn{i:05d}", synthetic_image(mask, rng), mask


def synthetic_masks(count: int, size: int = 128, seed: int = 0) -> list[np.ndarray]:
    """Only the masks of :func:`synthetic_samples` (skips image synthesis)."""
    return [synthetic_mask(size, np.random.default_rng([seed, i])) for i in range(count)]


def generate_synthetic_dataset(root, count: int, size: int = 128, seed: int = 0,
                               spacing: float = 1.0) -> DatasetManifest:
    """Write a synthetic dataset (PNG images and masks) under ``root`` plus manifest.json."""
    root = Path(root)
    entries = []
    for image_id, image, mask in synthetic_samples(count, size, seed):
        img_rel, mask_rel = f"images/{image_id}.png", f"masks/{image_id}.png"
        write_gray_png(image, root / img_rel)
        write_mask_png(mask, root / mask_rel)
        entries.append(ManifestEntry(image_id, img_rel, mask_rel, f"synthetic seed={seed}"))
    manifest = DatasetManifest(entries, spacing, "synthetic", root)
    manifest.save(root / "manifest.json")
    return manifest


# ---------------------------------------------------------------- JSRT import

def _mask_files_for(stem: str, mask_dir: Path) -> list[Path]:
    return sorted(p for p in mask_dir.rglob("*")
                  if p.is_file() and p.stem.upper().startswith(stem.upper()))


def import_jsrt(image_dir, mask_dir, out_root, size: int = 1024) -> DatasetManifest:
    """Convert JSRT companion masks to 8-bit PNG and write a manifest.

    Every mask file whose name starts with an image's stem is decoded and the
    union taken, so per-lung files (left/right) merge into one mask. Images stay
    in place as raw ``.IMG`` and are referenced relative to ``out_root``.
    """
    image_dir, mask_dir, out_root = Path(image_dir), Path(mask_dir), Path(out_root)
    entries = []
    for img in sorted(image_dir.glob("*.IMG")) + sorted(image_dir.glob("*.img")):
        files = _mask_files_for(img.stem, mask_dir)
        if not files:
            log.warning("no mask for %s, skipping", img.name)
            continue
        mask = None
        for f in files:
            with Image.open(f) as m:
                part = np.asarray(m.convert("L")) >= 128
            part, _ = resize_mask(part, size)
            mask = part if mask is None else mask | part
        mask_rel = f"masks/{img.stem}.png"
        write_mask_png(mask, out_root / mask_rel)
        entries.append(ManifestEntry(
            img.stem, os.path.relpath(img, out_root), mask_rel,
            ";".join(os.path.relpath(f, out_root) for f in files),
        ))
    manifest = DatasetManifest(entries, JSRT_SPACING * JSRT_SIZE / size, "jsrt", out_root)
    manifest.save(out_root / "manifest.json")
    return manifest
