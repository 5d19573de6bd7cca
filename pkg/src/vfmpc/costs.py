"""Planning cost functions and the learned success-classifier cost.

The standalone cost operations are resolution-independent (per-pixel means),
while `make_planning_cost` converts them into image-sum units for the
planner, where the default weighting temperature discriminates candidates.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError, ProtocolError, TrainingError
from . import world as w
from .dataset import DatasetReader

CLASSIFIER_MAGIC = b"VPCL"
CLASSIFIER_VERSION = 1
FEATURE_GRID = 16
FEATURE_DIM = FEATURE_GRID * FEATURE_GRID + 1


def pixel_mse_costs(predicted: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Batched pixel cost: per-frame mean squared error against the goal,
    summed over the prediction horizon.  predicted [B,T,H,W,C] -> [B]."""
    predicted = np.asarray(predicted)
    goal = np.asarray(goal)
    if predicted.ndim != 5 or predicted.shape[2:] != goal.shape:
        raise InvalidInputError(
            f"predicted shape {predicted.shape} does not match goal {goal.shape}"
        )
    diff = predicted.astype(np.float32) - goal.astype(np.float32)
    np.multiply(diff, diff, out=diff)
    per_frame = diff.mean(axis=(2, 3, 4), dtype=np.float64)
    return per_frame.sum(axis=1)


def pixel_mse_cost(predicted: np.ndarray, goal: np.ndarray) -> float:
    """Single-rollout pixel cost; predicted [T,H,W,C]."""
    predicted = np.asarray(predicted)
    if predicted.ndim != 4:
        raise InvalidInputError(f"predicted must be [T,H,W,C], got {predicted.shape}")
    return float(pixel_mse_costs(predicted[None], goal)[0])


# ---------------------------------------------------------------------------
# Success classifier: logistic regression on pooled grayscale features


def frame_features(frames: np.ndarray) -> np.ndarray:
    """Downsample frames to a 16x16 grayscale grid, flatten, append a bias.

    frames [..., H, W, 3] in [0,1] -> [..., 257] float64.
    """
    frames = np.asarray(frames, dtype=np.float64)
    h, width = frames.shape[-3], frames.shape[-2]
    if h < FEATURE_GRID or width < FEATURE_GRID:
        raise InvalidInputError("frames too small for the feature grid")
    gray = frames.mean(axis=-1)
    bh, bw = h // FEATURE_GRID, width // FEATURE_GRID
    gray = gray[..., : bh * FEATURE_GRID, : bw * FEATURE_GRID]
    shape = gray.shape[:-2] + (FEATURE_GRID, bh, FEATURE_GRID, bw)
    pooled = gray.reshape(shape).mean(axis=(-3, -1))
    flat = pooled.reshape(pooled.shape[:-2] + (FEATURE_GRID * FEATURE_GRID,))
    bias = np.ones(flat.shape[:-1] + (1,))
    return np.concatenate([flat, bias], axis=-1)


@dataclass
class ClassifierModel:
    weights: np.ndarray  # [257] float32
    metadata: dict = field(default_factory=dict)

    def logits(self, frames: np.ndarray) -> np.ndarray:
        return frame_features(frames) @ self.weights.astype(np.float64)

    def logit(self, frame: np.ndarray) -> float:
        return float(self.logits(frame[None])[0])


def save_classifier(path: Path, model: ClassifierModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = model.weights.astype("<f4")
    trailer = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CLASSIFIER_MAGIC)
        f.write(struct.pack("<BI", CLASSIFIER_VERSION, weights.shape[0]))
        f.write(weights.tobytes())
        f.write(trailer)


def load_classifier(path: Path) -> ClassifierModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLASSIFIER_MAGIC:
            raise ProtocolError(f"{path}: bad classifier magic {magic!r}")
        version, dim = struct.unpack("<BI", f.read(5))
        if version != CLASSIFIER_VERSION:
            raise ProtocolError(f"{path}: unsupported classifier version {version}")
        weights = np.frombuffer(f.read(dim * 4), dtype="<f4").copy()
        trailer = f.read()
    metadata = json.loads(trailer.decode("utf-8")) if trailer else {}
    return ClassifierModel(weights=weights, metadata=metadata)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    z = features @ weights
    # log(1 + exp(-y*z)) computed stably
    yz = np.where(labels > 0, z, -z)
    return float(np.mean(np.logaddexp(0.0, -yz)))


def train_classifier_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    steps: int = 3000,
    learning_rate: float = 0.5,
    seed: int = 0,
    batch_size: int = 64,
    metadata: dict | None = None,
) -> ClassifierModel:
    """Seeded minibatch SGD on the logistic loss; steps=0 yields the
    zero-weight (always-zero-logit) model."""
    labels = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng(seed)
    weights = np.zeros(features.shape[1], dtype=np.float64)
    n = features.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        xb = features[idx]
        yb = labels[idx]
        p = _sigmoid(xb @ weights)
        grad = xb.T @ (p - yb) / xb.shape[0]
        weights -= learning_rate * grad
    final_loss = _log_loss(features, labels, weights)
    meta = dict(metadata or {})
    meta.update(
        {
            "steps": steps,
            "learning_rate": learning_rate,
            "seed": seed,
            "final_loss": final_loss,
        }
    )
    return ClassifierModel(weights=weights.astype(np.float32), metadata=meta)


def train_success_classifier(
    dataset_path: Path,
    category: str,
    steps: int = 3000,
    learning_rate: float = 0.5,
    seed: int = 0,
) -> ClassifierModel:
    """Train the per-category success classifier from a trajectory dataset."""
    reader = DatasetReader(dataset_path)
    categories = [f"push_object_{k}" for k in range(reader.header.n_categories)]
    if category not in categories:
        raise ConfigurationError(f"unknown category {category!r}")
    c = categories.index(category)

    feature_list = []
    label_list = []
    for ep in reader.episodes():
        feature_list.append(frame_features(ep.frames_unit()))
        label_list.append(ep.success_labels[:, c])
    if not feature_list:
        raise TrainingError(f"dataset is empty; cannot train {category}")
    features = np.concatenate(feature_list, axis=0)
    labels = np.concatenate(label_list, axis=0)
    if labels.min() == labels.max():
        raise TrainingError(
            f"category {category!r} has a single class in this dataset"
        )
    return train_classifier_arrays(
        features,
        labels,
        steps=steps,
        learning_rate=learning_rate,
        seed=seed,
        metadata={"category": category},
    )


# ---------------------------------------------------------------------------
# Cost specification and the planning-time evaluator


@dataclass
class CostSpec:
    kind: str = "pixel_mse"
    pixel_weight: float = 1.0
    classifier_weight: float = 10.0
    classifier: ClassifierModel | None = None
    penalty_lambda: float = 0.01

    def __post_init__(self):
        if self.kind not in ("pixel_mse", "classifier_combo"):
            raise ConfigurationError(f"unknown cost kind {self.kind!r}")
        if self.pixel_weight < 0 or self.classifier_weight < 0:
            raise ConfigurationError("cost weights must be non-negative")
        if self.kind == "classifier_combo" and self.classifier is None:
            raise ConfigurationError("classifier_combo requires a classifier")
        if self.kind == "pixel_mse" and self.classifier is not None:
            raise ConfigurationError("pixel_mse cost takes no classifier")

    @classmethod
    def pixel(cls, pixel_weight: float = 1.0, penalty_lambda: float = 0.01) -> "CostSpec":
        return cls(kind="pixel_mse", pixel_weight=pixel_weight, penalty_lambda=penalty_lambda)

    @classmethod
    def combo(
        cls,
        classifier: ClassifierModel,
        pixel_weight: float = 0.5,
        classifier_weight: float = 10.0,
        penalty_lambda: float = 0.01,
    ) -> "CostSpec":
        return cls(
            kind="classifier_combo",
            pixel_weight=pixel_weight,
            classifier_weight=classifier_weight,
            classifier=classifier,
            penalty_lambda=penalty_lambda,
        )


def classifier_combo_cost(predicted: np.ndarray, goal: np.ndarray, spec: CostSpec) -> float:
    """Weighted pixel error plus negated time-averaged success logit: frames
    that look successful get cheaper."""
    if spec.kind != "classifier_combo":
        raise ConfigurationError("classifier_combo_cost needs a classifier_combo spec")
    if spec.classifier is None:
        raise ConfigurationError("cost spec is missing its classifier")
    pixel = pixel_mse_cost(predicted, goal)
    logits = spec.classifier.logits(np.asarray(predicted))
    return float(spec.pixel_weight * pixel - spec.classifier_weight * logits.mean())


def penalized_score(cost: float, delta: float, penalty_lambda: float) -> float:
    """Score = -cost - lambda * delta; disagreement always hurts."""
    return -cost - penalty_lambda * delta


def make_planning_cost(spec: CostSpec, goal_frame: np.ndarray):
    """Per-candidate planning costs in image-sum units.

    Summing the squared error over pixels (rather than averaging) is what
    puts candidate score gaps on the scale the default gamma=0.05 weighting
    was tuned for; per-pixel means would make every candidate weight nearly
    uniform and stall the optimizer.
    """
    goal = np.asarray(goal_frame, dtype=np.float32)
    per_frame_elements = float(goal.size)
    scratch: list[np.ndarray] = [np.empty(0, dtype=np.float32)]

    def cost_fn(frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim != 5 or frames.shape[2:] != goal.shape:
            raise InvalidInputError(
                f"predicted shape {frames.shape} does not match goal {goal.shape}"
            )
        # Same arithmetic as pixel_mse_costs, but diffed one timestep at a
        # time into a reused scratch block to stay out of the allocator.
        if scratch[0].shape != frames.shape[:1] + frames.shape[2:]:
            scratch[0] = np.empty(frames.shape[:1] + frames.shape[2:], np.float32)
        buf = scratch[0]
        flat = buf.reshape(buf.shape[0], -1)
        sums = np.empty((frames.shape[0], frames.shape[1]), dtype=np.float64)
        for t in range(frames.shape[1]):
            np.subtract(frames[:, t], goal, out=buf, casting="same_kind")
            sums[:, t] = np.einsum("bi,bi->b", flat, flat, dtype=np.float64)
        costs = spec.pixel_weight * sums.sum(axis=1)
        if spec.kind == "classifier_combo":
            logits = spec.classifier.logits(frames)  # [B,T]
            costs = costs - spec.classifier_weight * logits.mean(axis=1)
        return costs

    return cost_fn
