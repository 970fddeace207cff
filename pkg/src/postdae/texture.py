"""Gray-level co-occurrence matrices and the 13 Haralick texture statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegeneratePatch, InvalidConfig

HARALICK_NAMES = (
    "energy",
    "contrast",
    "correlation",
    "variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_correlation_1",
    "info_correlation_2",
)

# angle in degrees -> unit (row, col) step
_DIRECTIONS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}
_EPS = 1e-12


def offset_step(distance: int, angle: int) -> tuple[int, int]:
    if angle not in _DIRECTIONS:
        raise ValueError(f"angle must be one of {sorted(_DIRECTIONS)}, got {angle}")
    dy, dx = _DIRECTIONS[angle]
    return dy * distance, dx * distance


@dataclass(frozen=True)
class GLCMConfig:
    patch_size: int = 15
    gray_levels: int = 32
    offsets: tuple[tuple[int, int], ...] = ((1, 0), (1, 45), (1, 90), (1, 135))

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(tuple(o) for o in self.offsets))
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise InvalidConfig("patch_size must be odd and >= 3")
        if self.gray_levels < 2:
            raise InvalidConfig("gray_levels must be >= 2")
        for d, a in self.offsets:
            offset_step(d, a)

    @property
    def n_features(self) -> int:
        return 2 + len(HARALICK_NAMES) * len(self.offsets)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["offsets"] = [list(o) for o in self.offsets]
        return d


def quantize(image, levels: int) -> np.ndarray:
    """Map intensities in [0, 1] to integer bins ``0 .. levels-1``."""
    q = np.floor(np.asarray(image, dtype=np.float64) * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def _pairs(patches: np.ndarray, dy: int, dx: int):
    h, w = patches.shape[-2:]
    if abs(dy) >= h or abs(dx) >= w:
        raise DegeneratePatch(f"patch {h}x{w} too small for offset ({dy}, {dx})")
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    yd = slice(max(0, dy), h + min(0, dy))
    xd = slice(max(0, dx), w + min(0, dx))
    return patches[..., ys, xs], patches[..., yd, xd]


def glcm(patch, offset: tuple[int, int] = (1, 0), levels: int | None = None) -> np.ndarray:
    """Symmetric, normalised co-occurrence matrix of a quantised patch.

    ``offset`` is ``(distance, angle_degrees)``. Each neighbour pair is counted
    in both directions. ``patch`` may carry leading batch axes; the result then
    has shape ``(..., L, L)``.
    """
    patch = np.asarray(patch)
    if patch.ndim < 2:
        raise DegeneratePatch("patch must be at least 2-D")
    if levels is None:
        levels = int(patch.max()) + 1
    if patch.min() < 0 or patch.max() >= levels:
        raise ValueError(f"patch values must lie in [0, {levels})")
    a, b = _pairs(patch, *offset_step(*offset))
    batch = patch.shape[:-2]
    nb = int(np.prod(batch, dtype=np.int64))
    a = a.reshape(nb, -1)
    b = b.reshape(nb, -1)
    base = (np.arange(nb) * levels * levels)[:, None]
    counts = np.bincount((base + a * levels + b).ravel(), minlength=nb * levels * levels)
    counts = counts.reshape(nb, levels, levels).astype(np.float64)
    counts += counts.transpose(0, 2, 1)
    counts /= counts.sum(axis=(1, 2), keepdims=True)
    return counts.reshape(*batch, levels, levels)


def _entropy(p: np.ndarray, axes) -> np.ndarray:
    return -np.sum(p * np.log2(np.where(p > 0, p, 1.0)), axis=axes)


def haralick_features(matrix) -> np.ndarray:
    """The 13 Haralick statistics of a normalised co-occurrence matrix.

    Accepts ``(..., L, L)`` and returns ``(..., 13)`` in the order of
    :data:`HARALICK_NAMES`. Logarithms are base 2. Degenerate denominators
    (a constant patch has zero marginal variance) are guarded so every value
    stays finite; correlation is reported as 1 in that case.
    """
    p = np.asarray(matrix, dtype=np.float64)
    levels = p.shape[-1]
    i = np.arange(levels, dtype=np.float64)
    ii, jj = i[:, None], i[None, :]
    both = (-2, -1)

    px = p.sum(axis=-1)
    py = p.sum(axis=-2)
    mu_x = (px * i).sum(-1)
    mu_y = (py * i).sum(-1)
    sd_x = np.sqrt(np.maximum((px * (i - mu_x[..., None]) ** 2).sum(-1), 0.0))
    sd_y = np.sqrt(np.maximum((py * (i - mu_y[..., None]) ** 2).sum(-1), 0.0))

    # p_{x+y}(k), k = 0 .. 2L-2 and p_{x-y}(k), k = 0 .. L-1
    sum_idx = (ii + jj).astype(int).ravel()
    diff_idx = np.abs(ii - jj).astype(int).ravel()
    flat = p.reshape(*p.shape[:-2], levels * levels)
    p_sum = flat @ np.eye(2 * levels - 1)[sum_idx]
    p_diff = flat @ np.eye(levels)[diff_idx]
    k_sum = np.arange(2 * levels - 1, dtype=np.float64)
    k_diff = np.arange(levels, dtype=np.float64)

    energy = (p**2).sum(both)
    contrast = (k_diff**2 * p_diff).sum(-1)
    cov = (p * ii * jj).sum(both) - mu_x * mu_y
    denom = sd_x * sd_y
    correlation = np.where(denom > _EPS, cov / np.where(denom > _EPS, denom, 1.0), 1.0)
    variance = (p * (ii - mu_x[..., None, None]) ** 2).sum(both)
    idm = (p / (1.0 + (ii - jj) ** 2)).sum(both)
    sum_avg = (k_sum * p_sum).sum(-1)
    sum_var = ((k_sum - sum_avg[..., None]) ** 2 * p_sum).sum(-1)
    sum_ent = _entropy(p_sum, -1)
    ent = _entropy(p, both)
    diff_mean = (k_diff * p_diff).sum(-1)
    diff_var = ((k_diff - diff_mean[..., None]) ** 2 * p_diff).sum(-1)
    diff_ent = _entropy(p_diff, -1)

    hx = _entropy(px, -1)
    hy = _entropy(py, -1)
    pxpy = px[..., :, None] * py[..., None, :]
    log_pxpy = np.log2(np.where(pxpy > 0, pxpy, 1.0))
    hxy1 = -(p * log_pxpy).sum(both)
    hxy2 = -(pxpy * log_pxpy).sum(both)
    hmax = np.maximum(hx, hy)
    imc1 = np.where(hmax > _EPS, (ent - hxy1) / np.where(hmax > _EPS, hmax, 1.0), 0.0)
    imc2 = np.sqrt(np.maximum(1.0 - np.exp(-2.0 * (hxy2 - ent)), 0.0))

    return np.stack([
        energy, contrast, correlation, variance, idm, sum_avg, sum_var,
        sum_ent, ent, diff_var, diff_ent, imc1, imc2,
    ], axis=-1)


def pixel_features(image, coords: Sequence[tuple[int, int]] | np.ndarray,
                   cfg: GLCMConfig | None = None, chunk: int = 2048) -> np.ndarray:
    """Feature vectors for pixels of ``image`` (values in [0, 1]).

    Each row is ``[patch mean, patch std, haralick(offset_1), ..., haralick(offset_k)]``
    computed on the ``patch_size`` window centred on the pixel (reflect padding).
    """
    cfg = cfg or GLCMConfig()
    image = np.asarray(image, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    half = cfg.patch_size // 2
    padded = np.pad(image, half, mode="reflect")
    qpad = quantize(padded, cfg.gray_levels)
    windows = sliding_window_view(padded, (cfg.patch_size, cfg.patch_size))
    qwindows = sliding_window_view(qpad, (cfg.patch_size, cfg.patch_size))
    out = np.empty((len(coords), cfg.n_features))
    for start in range(0, len(coords), chunk):
        rows, cols = coords[start : start + chunk].T
        raw = windows[rows, cols]
        q = qwindows[rows, cols]
        parts = [raw.mean(axis=(1, 2))[:, None], raw.std(axis=(1, 2))[:, None]]
        for offset in cfg.offsets:
            parts.append(haralick_features(glcm(q, offset, cfg.gray_levels)))
        out[start : start + chunk] = np.concatenate(parts, axis=1)
    return out


def image_features(image, cfg: GLCMConfig | None = None, chunk: int = 2048) -> np.ndarray:
    """Features for every pixel, shape ``(H * W, n_features)`` in row-major order."""
    h, w = np.shape(image)
    coords = np.stack(np.divmod(np.arange(h * w), w), axis=1)
    return pixel_features(image, coords, cfg, chunk)
