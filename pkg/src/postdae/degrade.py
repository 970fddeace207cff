"""Stochastic mask corruption used to build (corrupted, clean) training pairs.

Three families of corruption are available:

* ``shapes``: add or remove random circles, ellipses, lines and rectangles;
* ``morphology``: erosion, dilation, opening or closing with a random kernel;
* ``border_swap``: flip labels at random in a band around the mask boundary.

By default each call to :func:`degrade` picks exactly one family, weighted by
``DegradationConfig.p_*``. Setting ``compose=True`` instead applies every family
independently with its weight as probability, in the fixed order above.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import InvalidConfig, InvalidShape
from .masks import (
    StructuringElement,
    as_mask,
    boundary_mask,
    closing,
    dilate,
    erode,
    opening,
)

ShapeKind = Literal["circle", "ellipse", "line", "rectangle"]
SHAPE_KINDS: tuple[str, ...] = ("circle", "ellipse", "line", "rectangle")
FAMILIES: tuple[str, ...] = ("shapes", "morphology", "border_swap")
MORPH_OPS = {"erode": erode, "dilate": dilate, "open": opening, "close": closing}


@dataclass(frozen=True)
class ShapeSpec:
    """Analytic shape on the pixel grid.

    Pixel ``(r, c)`` has its centre at coordinates ``(r, c)``; a pixel belongs
    to the shape iff its centre satisfies the shape inequality.

    * circle: ``center``, radius ``axes[0]``
    * ellipse: ``center``, semi-axes ``axes`` (along rows, cols before rotation), ``angle``
    * rectangle: ``center``, half-extents ``axes`` (rows, cols), ``angle``
    * line: segment ``start`` -> ``end`` drawn with ``thickness`` pixels
    """

    kind: ShapeKind
    mode: Literal["add", "remove"] = "add"
    center: tuple[float, float] = (0.0, 0.0)
    axes: tuple[float, float] = (1.0, 1.0)
    angle: float = 0.0
    start: tuple[float, float] | None = None
    end: tuple[float, float] | None = None
    thickness: float = 3.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidShape(f"unknown shape kind {self.kind!r}")
        if self.mode not in ("add", "remove"):
            raise InvalidShape(f"unknown mode {self.mode!r}")
        if self.kind == "line":
            if self.start is None or self.end is None:
                raise InvalidShape("line needs start and end points")
            if tuple(self.start) == tuple(self.end):
                raise InvalidShape("line endpoints are identical")
            if not self.thickness >= 1:
                raise InvalidShape(f"line thickness must be >= 1, got {self.thickness}")
        else:
            extent = self.axes[:1] if self.kind == "circle" else self.axes
            if any(not a > 0 for a in extent):
                raise InvalidShape(f"{self.kind} has a non-positive axis {self.axes}")

    def footprint(self, shape: tuple[int, int]) -> np.ndarray:
        """Boolean raster of the shape on an empty canvas of ``shape``."""
        yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
        if self.kind == "line":
            return _segment_distance(yy, xx, self.start, self.end) <= self.thickness / 2
        dy, dx = yy - self.center[0], xx - self.center[1]
        if self.kind == "circle":
            return dy**2 + dx**2 <= self.axes[0] ** 2
        cos, sin = math.cos(self.angle), math.sin(self.angle)
        u = cos * dy + sin * dx
        v = -sin * dy + cos * dx
        if self.kind == "ellipse":
            return (u / self.axes[0]) ** 2 + (v / self.axes[1]) ** 2 <= 1.0
        return (np.abs(u) <= self.axes[0]) & (np.abs(v) <= self.axes[1])


def _segment_distance(yy, xx, start, end):
    (y0, x0), (y1, x1) = start, end
    vy, vx = y1 - y0, x1 - x0
    t = ((yy - y0) * vy + (xx - x0) * vx) / (vy * vy + vx * vx)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (y0 + t * vy), xx - (x0 + t * vx))


def rasterize_shape(spec: ShapeSpec, canvas) -> np.ndarray:
    """Draw ``spec`` onto ``canvas``: OR for ``add``, AND-NOT for ``remove``."""
    canvas = as_mask(canvas, "canvas")
    shape = spec.footprint(canvas.shape)
    if spec.mode == "add":
        return canvas | shape
    return canvas & ~shape


def border_band(mask, band: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``band`` of a foreground boundary pixel."""
    edge = boundary_mask(mask)
    if not edge.any():
        return edge
    return dilate(edge, StructuringElement("square", band))


def border_label_swap(mask, band: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each pixel in the boundary band independently with probability ``p``."""
    mask = as_mask(mask)
    if band < 1:
        raise ValueError(f"band must be >= 1, got {band}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    region = border_band(mask, band)
    # draw for every pixel so the stream consumed does not depend on the band
    flips = rng.random(mask.shape) < p
    return mask ^ (region & flips)


@dataclass
class DegradationConfig:
    """Parameters of the corruption process. Serializes to flat JSON."""

    shape_count_range: tuple[int, int] = (1, 3)
    shape_size_range: tuple[float, float] = (0.05, 0.30)
    morph_kernel_range: tuple[int, int] = (3, 15)
    border_swap_probability: float = 0.3
    border_band: int = 3
    p_shapes: float = 1 / 3
    p_morphology: float = 1 / 3
    p_border_swap: float = 1 / 3
    p_shape_add: float = 0.5
    line_thickness: float = 3.0
    compose: bool = False
    seed: int = 0

    def __post_init__(self):
        self.shape_count_range = tuple(self.shape_count_range)
        self.shape_size_range = tuple(self.shape_size_range)
        self.morph_kernel_range = tuple(self.morph_kernel_range)
        self.validate()

    def validate(self) -> None:
        for name in ("shape_count_range", "shape_size_range", "morph_kernel_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfig(f"{name} is empty: {lo} > {hi}")
        if self.shape_count_range[0] < 0:
            raise InvalidConfig("shape_count_range must be non-negative")
        if not 0 < self.shape_size_range[0]:
            raise InvalidConfig("shape_size_range must be positive")
        if self.morph_kernel_range[0] < 3:
            raise InvalidConfig("morph_kernel_range must start at >= 3 px")
        if self.border_band < 1:
            raise InvalidConfig("border_band must be >= 1")
        for name in ("border_swap_probability", "p_shapes", "p_morphology",
                     "p_border_swap", "p_shape_add"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1], got {value}")
        if not self.compose and not math.isclose(sum(self.family_weights), 1.0, abs_tol=1e-9):
            raise InvalidConfig(f"family weights must sum to 1, got {sum(self.family_weights)}")
        if self.line_thickness < 1:
            raise InvalidConfig("line_thickness must be >= 1")

    @property
    def family_weights(self) -> tuple[float, float, float]:
        return (self.p_shapes, self.p_morphology, self.p_border_swap)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown degradation keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "DegradationConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise InvalidConfig("degradation config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "DegradationConfig":
        return cls.from_json(Path(path).read_text())


def random_shape(
    shape: tuple[int, int],
    cfg: DegradationConfig,
    rng: np.random.Generator,
    mask: np.ndarray | None = None,
) -> ShapeSpec:
    """Sample one random shape. Removals are centred on foreground when possible."""
    h, w = shape
    kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
    mode = "add" if rng.random() < cfg.p_shape_add else "remove"
    size = rng.uniform(*cfg.shape_size_range) * min(h, w)
    if mode == "remove" and mask is not None and mask.any():
        fg = np.argwhere(mask)
        cy, cx = (float(v) for v in fg[rng.integers(len(fg))])
    else:
        cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
    angle = rng.uniform(0, math.pi)
    half = max(size / 2, 0.5)
    if kind == "circle":
        return ShapeSpec("circle", mode, (cy, cx), (half, half))
    if kind == "ellipse":
        return ShapeSpec("ellipse", mode, (cy, cx), (half, half * rng.uniform(0.3, 1.0)), angle)
    if kind == "rectangle":
        axes = (half * rng.uniform(0.3, 1.0), half * rng.uniform(0.3, 1.0))
        return ShapeSpec("rectangle", mode, (cy, cx), axes, angle)
    dy, dx = half * math.sin(angle), half * math.cos(angle)
    return ShapeSpec(
        "line", mode, (cy, cx),
        start=(cy - dy, cx - dx), end=(cy + dy, cx + dx),
        thickness=cfg.line_thickness,
    )


def apply_shapes(mask, cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.shape_count_range
    out = mask
    for _ in range(int(rng.integers(lo, hi + 1))):
        out = rasterize_shape(random_shape(out.shape, cfg, rng, out), out)
    return out


def apply_morphology(mask, cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.morph_kernel_range
    odd_sizes = [k for k in range(lo, hi + 1) if k % 2 == 1]
    if not odd_sizes:
        raise InvalidConfig(f"morph_kernel_range {cfg.morph_kernel_range} has no odd size")
    size = odd_sizes[rng.integers(len(odd_sizes))]
    se = StructuringElement(("disk", "square")[rng.integers(2)], (size - 1) // 2)
    op = list(MORPH_OPS.values())[rng.integers(len(MORPH_OPS))]
    return op(mask, se)


def apply_border_swap(mask, cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    return border_label_swap(mask, cfg.border_band, cfg.border_swap_probability, rng)


_FAMILY_FUNCS = {
    "shapes": apply_shapes,
    "morphology": apply_morphology,
    "border_swap": apply_border_swap,
}


def degrade(
    mask,
    cfg: DegradationConfig | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Corrupt ``mask`` with randomly chosen families of degradation.

    Deterministic for a given ``(mask, cfg, rng state)``. When ``rng`` is
    omitted a generator seeded with ``cfg.seed`` is used.
    """
    cfg = cfg or DegradationConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out = as_mask(mask).copy()
    weights = np.asarray(cfg.family_weights, dtype=float)
    if cfg.compose:
        chosen = [f for f, p in zip(FAMILIES, weights) if rng.random() < p]
    else:
        chosen = [FAMILIES[rng.choice(len(FAMILIES), p=weights / weights.sum())]]
    for family in chosen:
        out = _FAMILY_FUNCS[family](out, cfg, rng)
    return out
