"""Binary mask algebra: validation, morphology, boundaries, components and PNG I/O.

A mask is a 2-D ``bool`` numpy array (``True`` = foreground). Pixel spacing is
metadata that travels next to the array (manifests, eval records) rather than
inside it, so every function here works on plain arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidMask

#: Spacing of a JSRT image after downsampling 2048 -> 1024 (0.175 mm/px * 2).
DEFAULT_SPACING = 0.175 * 2


def as_mask(array, name: str = "mask") -> np.ndarray:
    """Validate ``array`` as a binary mask and return it as a bool array.

    Accepts bool arrays and numeric arrays whose values are exactly 0 or 1.
    """
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise InvalidMask(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidMask(f"{name} must be at least 1x1, got {arr.shape}")
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidMask(f"{name} has values other than 0 and 1")
    return arr.astype(bool)


@dataclass(frozen=True)
class StructuringElement:
    """Symmetric flat structuring element of a given radius.

    ``disk`` includes offsets with ``dy**2 + dx**2 <= radius**2``;
    ``square`` is the full ``(2r+1) x (2r+1)`` block.
    """

    shape: Literal["disk", "square"] = "square"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")

    @property
    def array(self) -> np.ndarray:
        r = self.radius
        if self.shape == "square":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        return yy**2 + xx**2 <= r**2

    def offsets(self) -> np.ndarray:
        """(K, 2) array of (dy, dx) offsets covered by the element."""
        return np.argwhere(self.array) - self.radius


def _shifted_views(mask: np.ndarray, se: StructuringElement, fill: bool):
    r = se.radius
    padded = np.pad(mask, r, mode="constant", constant_values=fill)
    h, w = mask.shape
    for dy, dx in se.offsets():
        yield padded[r + dy : r + dy + h, r + dx : r + dx + w]


def erode(mask, se: StructuringElement, border_value: bool = False) -> np.ndarray:
    """Binary erosion.

    A pixel survives iff every pixel covered by ``se`` centred on it is
    foreground. Pixels outside the image count as ``border_value``
    (background by default, so masks touching the border shrink).
    """
    mask = as_mask(mask)
    out = np.ones_like(mask)
    for view in _shifted_views(mask, se, border_value):
        out &= view
    return out


def dilate(mask, se: StructuringElement) -> np.ndarray:
    """Binary dilation: a pixel is set iff ``se`` centred on it hits foreground."""
    mask = as_mask(mask)
    out = np.zeros_like(mask)
    # se is symmetric, so reflection is a no-op
    for view in _shifted_views(mask, se, False):
        out |= view
    return out


def opening(mask, se: StructuringElement) -> np.ndarray:
    return dilate(erode(mask, se), se)


def closing(mask, se: StructuringElement) -> np.ndarray:
    return erode(dilate(mask, se), se)


def boundary_mask(mask) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour that is background or off-image."""
    mask = as_mask(mask)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def boundary(mask) -> np.ndarray:
    """Boundary pixel coordinates as an ``(N, 2)`` int array of (row, col)."""
    return np.argwhere(boundary_mask(mask))


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labelling. Returns ``(labels, count)`` with background 0."""
    labels, count = ndimage.label(as_mask(mask), structure=_EIGHT)
    return labels, int(count)


def count_components(mask) -> int:
    return connected_components(mask)[1]


def read_mask_png(path) -> np.ndarray:
    """Decode an 8-bit mask image; any value >= 128 is foreground."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


def write_mask_png(mask, path) -> None:
    mask = as_mask(mask)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)
