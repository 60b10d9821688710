"""Deterministic synthetic pools: long-tailed scenes plus a noisy detector.

Every image draws from its own RNG stream keyed by (seed, purpose,
image_id), so pools are identical no matter the generation order and a
noise-config change never reshuffles the underlying scenes. The detector
model: each object is detected with probability 1 - miss_rate, its box is
jittered, and its class scores are a boosted-truth vector passed through a
tempered softmax; false positives appear as random boxes with flat scores
and high background mass. Temperature zero means an idealized detector:
exact one-hot probabilities and zero background score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import ImageFeature
from .datamodel import GroundTruthObject, ImageStatus, PoolImage, PoolState, Prediction
from .errors import SceneTooDenseError
from .geometry import HALF_PI, RotatedBox, rotated_iou

PLACEMENT_IOU_CAP = 0.3
PLACEMENT_ATTEMPTS = 1000
TRUE_CLASS_BOOST = 5.0
ANGLE_JITTER_PER_PIXEL_SIGMA = 0.02
# Per-image predictions are numbered within a block of this size, which
# keeps pred_ids globally unique and independent of generation order.
PRED_ID_STRIDE = 10_000

_SCENE_STREAM = 0
_SPLIT_STREAM = 1
_DETECTOR_STREAM = 2


@dataclass(frozen=True)
class NoiseConfig:
    """Detector imperfection knobs; all zero means a perfect detector."""

    prob_temperature: float = 1.0
    confusion_rate: float = 0.0
    box_jitter_sigma: float = 0.0
    false_positive_rate: float = 0.0
    miss_rate: float = 0.0

    def __post_init__(self):
        if self.prob_temperature < 0:
            raise ValueError("prob_temperature must be >= 0 (0 = exact one-hot)")
        if not 0.0 <= self.confusion_rate < 1.0:
            raise ValueError("confusion_rate must be in [0, 1)")
        if self.box_jitter_sigma < 0 or self.false_positive_rate < 0:
            raise ValueError("jitter and false-positive rate must be >= 0")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must be in [0, 1]")


@dataclass(frozen=True)
class GenConfig:
    """Synthetic pool shape: scenes, class skew, detector noise, features."""

    num_classes: int = 8
    num_images: int = 100
    objects_per_image: tuple[int, int] = (4, 10)
    class_frequency_exponent: float = 1.5
    scene_size: float = 1024.0
    box_size_range: tuple[float, float] = (24.0, 80.0)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    feature_dim: int = 8
    feature_separation: float = 3.0
    initial_labeled_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.num_images < 1:
            raise ValueError("need at least one image")
        lo, hi = self.objects_per_image
        if not 0 <= lo <= hi:
            raise ValueError("objects_per_image must satisfy 0 <= min <= max")
        if self.class_frequency_exponent < 0:
            raise ValueError("class_frequency_exponent must be >= 0")
        size_lo, size_hi = self.box_size_range
        if not 0 < size_lo <= size_hi or size_hi > self.scene_size:
            raise ValueError("box sizes must fit the scene")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_separation < 0:
            raise ValueError("feature_separation must be >= 0")
        if not 0.0 <= self.initial_labeled_fraction <= 1.0:
            raise ValueError("initial_labeled_fraction must be in [0, 1]")


@dataclass
class SynthPool:
    """A generated pool plus the oracle-side ground truth and features."""

    config: GenConfig
    pool: PoolState
    gt_by_image: dict[int, list[GroundTruthObject]]
    object_features: dict[int, np.ndarray]
    pred_features: dict[int, tuple[float, ...]]
    image_features: list[ImageFeature]
    class_means: np.ndarray
    initial_labeled_ids: list[int]


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, purpose, index)))


def class_distribution(config: GenConfig) -> np.ndarray:
    """Power-law class frequencies: p_k proportional to (k+1)^-s."""
    raw = (np.arange(config.num_classes) + 1.0) ** (-config.class_frequency_exponent)
    return raw / raw.sum()


def class_feature_means(config: GenConfig) -> np.ndarray:
    """Deterministic class centers: separation along cycling axes."""
    means = np.zeros((config.num_classes, config.feature_dim))
    for k in range(config.num_classes):
        axis = k % config.feature_dim
        level = 1 + k // config.feature_dim
        means[k, axis] = config.feature_separation * level
    return means


def gen_scene(
    config: GenConfig, image_id: int
) -> tuple[list[GroundTruthObject], np.ndarray]:
    """Objects and per-object features for one image.

    Boxes are rejection-sampled so no pair overlaps above the placement
    cap, which keeps the IoU-max labeling rule unambiguous in practice.
    """
    rng = _stream(config.seed, _SCENE_STREAM, image_id)
    probs = class_distribution(config)
    means = class_feature_means(config)
    lo, hi = config.objects_per_image
    count = int(rng.integers(lo, hi + 1))
    size_lo, size_hi = config.box_size_range
    objects: list[GroundTruthObject] = []
    features = np.zeros((count, config.feature_dim))
    for i in range(count):
        class_id = int(rng.choice(config.num_classes, p=probs))
        placed = None
        for _ in range(PLACEMENT_ATTEMPTS):
            w = float(rng.uniform(size_lo, size_hi))
            h = float(rng.uniform(size_lo, size_hi))
            cx = float(rng.uniform(w / 2, config.scene_size - w / 2))
            cy = float(rng.uniform(h / 2, config.scene_size - h / 2))
            angle = float(rng.uniform(-HALF_PI, HALF_PI))
            candidate = RotatedBox.create(cx, cy, w, h, angle)
            if all(rotated_iou(candidate, o.box) < PLACEMENT_IOU_CAP for o in objects):
                placed = candidate
                break
        if placed is None:
            raise SceneTooDenseError(
                f"image {image_id}: no room for object {i} after {PLACEMENT_ATTEMPTS} attempts"
            )
        objects.append(GroundTruthObject(gt_id=i, class_id=class_id, box=placed))
        features[i] = means[class_id] + rng.normal(0.0, 1.0, config.feature_dim)
    return objects, features


def _class_probs(
    rng: np.random.Generator, num_classes: int, boosted: int, temperature: float
) -> np.ndarray:
    if temperature == 0.0:
        probs = np.zeros(num_classes)
        probs[boosted] = 1.0
        return probs
    scores = rng.normal(0.0, 1.0, num_classes)
    scores[boosted] += TRUE_CLASS_BOOST
    scores = scores / temperature
    scores -= scores.max()
    exps = np.exp(scores)
    return exps / exps.sum()


def simulate_detector(
    objects: list[GroundTruthObject],
    features: np.ndarray,
    config: GenConfig,
    image_id: int,
) -> tuple[list[Prediction], dict[int, tuple[float, ...]]]:
    """Noisy detections for one scene, with a feature vector per detection.

    True positives reuse their object's feature (the region is the object);
    false positives draw from the zero-mean background distribution.
    """
    rng = _stream(config.seed, _DETECTOR_STREAM, image_id)
    noise = config.noise
    predictions: list[Prediction] = []
    pred_features: dict[int, tuple[float, ...]] = {}
    next_id = image_id * PRED_ID_STRIDE

    for gt in objects:
        if rng.random() < noise.miss_rate:
            continue
        box = gt.box
        if noise.box_jitter_sigma > 0:
            sigma = noise.box_jitter_sigma
            box = RotatedBox.create(
                box.cx + rng.normal(0.0, sigma),
                box.cy + rng.normal(0.0, sigma),
                max(2.0, box.w + rng.normal(0.0, sigma)),
                max(2.0, box.h + rng.normal(0.0, sigma)),
                box.angle + rng.normal(0.0, ANGLE_JITTER_PER_PIXEL_SIGMA * sigma),
            )
        boosted = gt.class_id
        if noise.confusion_rate > 0 and rng.random() < noise.confusion_rate:
            others = [k for k in range(config.num_classes) if k != gt.class_id]
            boosted = int(rng.choice(others))
        foreground = _class_probs(rng, config.num_classes, boosted, noise.prob_temperature)
        if noise.prob_temperature == 0.0:
            background = 0.0
        else:
            background = float(rng.uniform(0.02, 0.2))
        prediction = Prediction(
            pred_id=next_id,
            image_id=image_id,
            box=box,
            class_probs=tuple(float(p) for p in foreground * (1.0 - background)),
            background_score=background,
        )
        predictions.append(prediction)
        pred_features[next_id] = tuple(float(v) for v in features[gt.gt_id])
        next_id += 1

    for _ in range(int(rng.poisson(noise.false_positive_rate))):
        size_lo, size_hi = config.box_size_range
        w = float(rng.uniform(size_lo, size_hi))
        h = float(rng.uniform(size_lo, size_hi))
        box = RotatedBox.create(
            float(rng.uniform(w / 2, config.scene_size - w / 2)),
            float(rng.uniform(h / 2, config.scene_size - h / 2)),
            w,
            h,
            float(rng.uniform(-HALF_PI, HALF_PI)),
        )
        flat = rng.normal(0.0, 0.25, config.num_classes)
        if noise.prob_temperature > 0:
            flat = flat / noise.prob_temperature
        flat -= flat.max()
        exps = np.exp(flat)
        foreground = exps / exps.sum()
        background = float(rng.uniform(0.5, 0.9))
        prediction = Prediction(
            pred_id=next_id,
            image_id=image_id,
            box=box,
            class_probs=tuple(float(p) for p in foreground * (1.0 - background)),
            background_score=background,
        )
        predictions.append(prediction)
        pred_features[next_id] = tuple(
            float(v) for v in rng.normal(0.0, 1.0, config.feature_dim)
        )
        next_id += 1
    return predictions, pred_features


def gen_pool(config: GenConfig) -> SynthPool:
    """Full synthetic experiment input: pool, oracle truth, features.

    A seeded fraction of images starts fully labeled; their ground truth is
    visible to the learner and marked annotated on the oracle side.
    """
    gt_by_image: dict[int, list[GroundTruthObject]] = {}
    object_features: dict[int, np.ndarray] = {}
    pred_features: dict[int, tuple[float, ...]] = {}
    images: dict[int, PoolImage] = {}
    image_features: list[ImageFeature] = []

    for image_id in range(config.num_images):
        objects, features = gen_scene(config, image_id)
        predictions, feats = simulate_detector(objects, features, config, image_id)
        gt_by_image[image_id] = objects
        object_features[image_id] = features
        pred_features.update(feats)
        images[image_id] = PoolImage(image_id, predictions)
        mean = features.mean(axis=0) if len(objects) else np.zeros(config.feature_dim)
        image_features.append(
            ImageFeature(image_id, tuple(float(v) for v in mean))
        )

    split_rng = _stream(config.seed, _SPLIT_STREAM)
    n_labeled = int(math.floor(config.initial_labeled_fraction * config.num_images + 0.5))
    order = split_rng.permutation(config.num_images)
    initial_ids = sorted(int(i) for i in order[:n_labeled])
    for image_id in initial_ids:
        images[image_id].status = ImageStatus.FULLY_LABELED
        images[image_id].labeled_objects = list(gt_by_image[image_id])
        for gt in gt_by_image[image_id]:
            gt.labeled = True

    pool = PoolState(images, config.num_classes)
    return SynthPool(
        config=config,
        pool=pool,
        gt_by_image=gt_by_image,
        object_features=object_features,
        pred_features=pred_features,
        image_features=image_features,
        class_means=class_feature_means(config),
        initial_labeled_ids=initial_ids,
    )
