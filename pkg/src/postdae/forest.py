"""Pixel-wise random-forest segmenter on intensity and Haralick texture features.

The decision-forest learner is pluggable: anything with ``fit(X, y)`` and
``predict_proba(X)`` works. scikit-learn's ``RandomForestClassifier`` is the
default.
"""
from __future__ import annotations

import hashlib
import json
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .errors import CheckpointError, DimensionMismatch, EmptyDataset, UntrainedModel
from .masks import as_mask
from .texture import GLCMConfig, image_features, pixel_features


class PixelLearner(Protocol):
    def fit(self, features: np.ndarray, labels: np.ndarray): ...

    def predict_proba(self, features: np.ndarray) -> np.ndarray: ...


@dataclass
class RFConfig:
    glcm: GLCMConfig = field(default_factory=GLCMConfig)
    samples_per_image: int = 2000
    n_estimators: int = 100
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.glcm, dict):
            self.glcm = GLCMConfig(**self.glcm)
        if self.samples_per_image < 2:
            raise ValueError("samples_per_image must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["glcm"] = self.glcm.to_dict()
        return d


@dataclass
class RFModel:
    config: RFConfig
    learner: PixelLearner
    fitted: bool = False


def default_learner(cfg: RFConfig) -> RandomForestClassifier:
    return RandomForestClassifier(n_estimators=cfg.n_estimators, random_state=cfg.seed, n_jobs=1)


def balanced_pixels(mask: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``n // 2`` coordinates from each class, without replacement."""
    picks = []
    for label in (False, True):
        coords = np.argwhere(mask == label)
        k = min(n // 2, len(coords))
        if k:
            picks.append(coords[rng.choice(len(coords), size=k, replace=False)])
    return np.concatenate(picks) if picks else np.empty((0, 2), dtype=int)


def train_rf(images: Sequence[np.ndarray], masks: Sequence[np.ndarray],
             cfg: RFConfig | None = None, learner: PixelLearner | None = None) -> RFModel:
    cfg = cfg or RFConfig()
    if len(images) == 0:
        raise EmptyDataset("no training images")
    if len(images) != len(masks):
        raise DimensionMismatch("images and masks differ in number")
    rng = np.random.default_rng(cfg.seed)
    feats, labels = [], []
    for img, mask in zip(images, masks):
        mask = as_mask(mask)
        if np.shape(img) != mask.shape:
            raise DimensionMismatch(f"image {np.shape(img)} and mask {mask.shape} differ")
        coords = balanced_pixels(mask, cfg.samples_per_image, rng)
        feats.append(pixel_features(img, coords, cfg.glcm))
        labels.append(mask[coords[:, 0], coords[:, 1]])
    learner = learner if learner is not None else default_learner(cfg)
    learner.fit(np.concatenate(feats), np.concatenate(labels).astype(int))
    return RFModel(cfg, learner, fitted=True)


def predict_rf(model: RFModel, image) -> np.ndarray:
    """Foreground probability for every pixel of ``image``."""
    if not model.fitted:
        raise UntrainedModel("random forest has not been trained")
    image = np.asarray(image, dtype=np.float64)
    proba = model.learner.predict_proba(image_features(image, model.config.glcm))
    classes = list(getattr(model.learner, "classes_", [0, 1]))
    fg = proba[:, classes.index(1)] if 1 in classes else np.zeros(len(proba))
    return np.clip(fg, 0.0, 1.0).reshape(image.shape)


def save_rf(model: RFModel, directory) -> Path:
    """Feature config as JSON plus the pickled learner, referenced by its sha256."""
    if not model.fitted:
        raise UntrainedModel("refusing to save an untrained model")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = pickle.dumps(model.learner, protocol=pickle.HIGHEST_PROTOCOL)
    (directory / "learner.pkl").write_bytes(blob)
    meta = {"kind": "rf", "config": model.config.to_dict(),
            "learner_file": "learner.pkl", "sha256": hashlib.sha256(blob).hexdigest()}
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_rf(directory) -> RFModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    blob = (directory / meta["learner_file"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise CheckpointError("random forest blob fails its content hash")
    return RFModel(RFConfig(**meta["config"]), pickle.loads(blob), fitted=True)
