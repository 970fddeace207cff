"""Fully connected two-label CRF with Gaussian kernels and mean-field inference.

The pairwise kernel between pixels ``i`` and ``j`` (positions ``p``, intensities ``I``)::

    k(i, j) = w_app    * exp(-|p_i - p_j|^2 / 2 theta_alpha^2 - (I_i - I_j)^2 / 2 theta_beta^2)
            + w_smooth * exp(-|p_i - p_j|^2 / 2 theta_gamma^2)

combined with a Potts compatibility (cost 1 for differing labels). Inference
is the exact O(N^2) dense update; nothing is approximated, so the image size
is capped by ``DenseCRFParams.max_pixels``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import softmax

from .errors import DimensionMismatch, ImageTooLarge, InvalidConfig, InvalidProbability

# kernel matrices up to this many bytes are built once and reused across iterations
_CACHE_BYTES = 256 * 2**20
_CHUNK_ROWS = 512


@dataclass(frozen=True)
class DenseCRFParams:
    theta_alpha: float = 17.0
    theta_beta: float = 3.0
    theta_gamma: float = 3.0
    w_appearance: float = 1.0
    w_smoothness: float = 1.0
    iterations: int = 5
    max_pixels: int = 128 * 128

    def __post_init__(self):
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise InvalidConfig("all thetas must be > 0")
        if self.iterations < 1:
            raise InvalidConfig("iterations must be >= 1")
        if self.w_appearance < 0 or self.w_smoothness < 0:
            raise InvalidConfig("kernel weights must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def unary_from_prob(prob, epsilon: float = 1e-6) -> np.ndarray:
    """Negative log-probabilities, shape ``(2, H, W)``: index 0 background, 1 foreground."""
    prob = np.asarray(prob, dtype=np.float64)
    if np.any(prob < 0) or np.any(prob > 1) or np.any(np.isnan(prob)):
        raise InvalidProbability("probabilities must lie in [0, 1]")
    p = np.clip(prob, epsilon, 1.0 - epsilon)
    return np.stack([-np.log1p(-p), -np.log(p)])


def _features(image: np.ndarray):
    h, w = image.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    return rows.astype(np.float64), cols.astype(np.float64), image.reshape(-1).astype(np.float64)


def kernel_rows(image, params: DenseCRFParams, rows_idx: np.ndarray) -> np.ndarray:
    """Pairwise kernel ``k(i, j)`` for ``i`` in ``rows_idx`` and every ``j`` (diagonal zeroed)."""
    r, c, intensity = _features(np.asarray(image, dtype=np.float64))
    d2 = (r[rows_idx, None] - r[None, :]) ** 2 + (c[rows_idx, None] - c[None, :]) ** 2
    k = np.zeros_like(d2)
    if params.w_appearance:
        di2 = (intensity[rows_idx, None] - intensity[None, :]) ** 2
        k += params.w_appearance * np.exp(
            -d2 / (2 * params.theta_alpha**2) - di2 / (2 * params.theta_beta**2)
        )
    if params.w_smoothness:
        k += params.w_smoothness * np.exp(-d2 / (2 * params.theta_gamma**2))
    k[np.arange(len(rows_idx)), rows_idx] = 0.0
    return k


class _KernelOperator:
    """Applies the dense kernel to a vector, caching the matrix when it is small."""

    def __init__(self, image, params: DenseCRFParams):
        self.image = image
        self.params = params
        self.n = image.size
        self._matrix = None
        if self.n * self.n * 8 <= _CACHE_BYTES:
            self._matrix = kernel_rows(image, params, np.arange(self.n))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix @ x
        out = np.empty_like(x)
        for start in range(0, self.n, _CHUNK_ROWS):
            idx = np.arange(start, min(start + _CHUNK_ROWS, self.n))
            out[idx] = kernel_rows(self.image, self.params, idx) @ x
        return out


def mean_field(image, unary, params: DenseCRFParams | None = None,
               return_history: bool = False):
    """Run synchronous mean-field updates.

    Returns the final ``Q`` of shape ``(2, H, W)``, or the list of all ``Q``
    (initial softmax of the unaries first) when ``return_history`` is set.
    """
    params = params or DenseCRFParams()
    image = np.asarray(image, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    if image.ndim != 2 or unary.shape != (2, *image.shape):
        raise DimensionMismatch(f"image {image.shape} and unary {unary.shape} disagree")
    if image.size > params.max_pixels:
        raise ImageTooLarge(f"{image.size} pixels exceeds the exact-inference cap {params.max_pixels}")
    u = unary.reshape(2, -1)
    q = softmax(-u, axis=0)
    history = [q.reshape(unary.shape).copy()]
    if params.w_appearance or params.w_smoothness:
        apply_kernel = _KernelOperator(image, params)
    for _ in range(params.iterations):
        if params.w_appearance or params.w_smoothness:
            msg = apply_kernel(q.T).T  # msg[l, i] = sum_j k(i, j) Q_j(l)
            # Potts: label l pays for the mass on the other label
            energy = u + msg[::-1]
        else:
            energy = u
        q = softmax(-energy, axis=0)
        history.append(q.reshape(unary.shape).copy())
    return history if return_history else history[-1]


def run_crf_meanfield(image, unary, params: DenseCRFParams | None = None) -> np.ndarray:
    """Dense CRF MAP labelling: argmax of the mean-field marginals (ties -> background)."""
    q = mean_field(image, unary, params)
    return q[1] > q[0]


def crf_postprocess(image, prob, params: DenseCRFParams | None = None,
                    epsilon: float = 1e-6) -> np.ndarray:
    """Convenience: unaries from a probability map, then :func:`run_crf_meanfield`."""
    return run_crf_meanfield(image, unary_from_prob(prob, epsilon), params)
