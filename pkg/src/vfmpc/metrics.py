"""Prediction-quality metrics, control-success aggregation, and the
metric-vs-control comparison study.

Image metrics work on [0,1] frames; the study joins held-out prediction
quality with benchmark success rates and flags models whose metric ranking
disagrees with their control ranking.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from . import world as w
from .dataset import DatasetReader, recover_colors, recover_state
from .models import HiddenStateToken, PredictionRequest

PSNR_SENTINEL_DB = 999.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; identical
    inputs report a finite sentinel instead of infinity."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_SENTINEL_DB
    return float(10.0 * np.log10(1.0 / err))


def _box_window_means(img: np.ndarray, window: int) -> np.ndarray:
    """Means of all window x window patches (valid padding) via an integral
    image; img [H,W] float64 -> [H-w+1, W-w+1]."""
    integral = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    np.cumsum(np.cumsum(img, axis=0), axis=1, out=integral[1:, 1:])
    sums = (
        integral[window:, window:]
        - integral[:-window, window:]
        - integral[window:, :-window]
        + integral[:-window, :-window]
    )
    return sums / (window * window)


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Structural similarity with uniform windows, valid padding, and
    population moments, averaged over channels and window positions."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise InvalidInputError(f"ssim expects [H,W] or [H,W,C], got {a.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise InvalidInputError("image smaller than the ssim window")
    values = []
    for c in range(a.shape[2]):
        ac = a[:, :, c]
        bc = b[:, :, c]
        mu_a = _box_window_means(ac, window)
        mu_b = _box_window_means(bc, window)
        var_a = _box_window_means(ac * ac, window) - mu_a**2
        var_b = _box_window_means(bc * bc, window) - mu_b**2
        cov = _box_window_means(ac * bc, window) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        values.append(num / den)
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Held-out prediction evaluation


@dataclass
class ModelMetrics:
    model_name: str
    mse: float
    psnr_db: float
    ssim: float
    per_sequence: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "mse": self.mse,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "per_sequence": self.per_sequence,
        }


@dataclass
class MetricReport:
    models: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "models": {k: v.to_dict() for k, v in self.models.items()},
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def evaluate_prediction_metrics(
    model,
    dataset_path: Path,
    n_sequences: int = 20,
    seed: int = 0,
    context_len: int = 2,
    horizon: int = 10,
    world_config: w.WorldConfig | None = None,
) -> ModelMetrics:
    """Score a model's rollouts against held-out ground truth.

    Random windows are drawn from the dataset; the model gets the context
    frames plus the actions actually executed, and its predictions are
    compared frame by frame.  State-privileged models additionally get the
    exact stored simulator state for the window (world_config required).
    """
    reader = DatasetReader(dataset_path)
    hd = reader.header
    if hd.traj_len < context_len + horizon:
        raise InvalidInputError(
            f"held-out sequences are shorter than T_c + T_plan = {context_len + horizon}"
        )
    if hd.n_episodes < 1:
        raise InvalidInputError("held-out dataset is empty")
    requires_state = getattr(model, "requires_state", False)
    if requires_state and world_config is None:
        raise InvalidInputError("state-privileged models need the world config")

    rng = np.random.default_rng(seed)
    per_sequence = []
    for i in range(n_sequences):
        ep_index = int(rng.integers(0, hd.n_episodes))
        start = int(rng.integers(0, hd.traj_len - context_len - horizon + 1))
        record = reader.episode(ep_index)
        frames = record.frames_unit()
        context = frames[start : start + context_len]
        actions = record.actions[start : start + context_len - 1 + horizon]
        truth = frames[start + context_len : start + context_len + horizon]

        token = None
        if requires_state:
            colors = recover_colors(record, world_config)
            state = recover_state(
                record, start + context_len - 1, world_config, colors
            )
            token = HiddenStateToken(state)
        request = PredictionRequest(context, actions[None, :, :], horizon)
        try:
            response = model.predict(request, token)
        except Exception as exc:
            raise type(exc)(f"sequence {i} (episode {ep_index}): {exc}") from exc
        predicted = response.frames[0]
        seq_mse = mse(predicted, truth)
        seq_ssim = float(
            np.mean([ssim(predicted[t], truth[t]) for t in range(horizon)])
        )
        per_sequence.append(
            {
                "episode": ep_index,
                "start": start,
                "mse": seq_mse,
                "psnr_db": PSNR_SENTINEL_DB if seq_mse == 0 else float(10 * np.log10(1 / seq_mse)),
                "ssim": seq_ssim,
            }
        )
    return ModelMetrics(
        model_name=getattr(model, "name", "model"),
        mse=float(np.mean([s["mse"] for s in per_sequence])),
        psnr_db=float(np.mean([s["psnr_db"] for s in per_sequence])),
        ssim=float(np.mean([s["ssim"] for s in per_sequence])),
        per_sequence=per_sequence,
    )


# ---------------------------------------------------------------------------
# Control aggregation


@dataclass
class ControlReport:
    model_name: str
    per_category: dict  # category -> {"successes", "episodes", "rate"}
    overall_rate: float
    n_episodes: int
    normalized_score: float | None = None
    normalization_warning: bool = False
    episodes: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "model_name": self.model_name,
            "per_category": self.per_category,
            "overall_rate": self.overall_rate,
            "n_episodes": self.n_episodes,
            "normalized_score": self.normalized_score,
            "normalization_warning": self.normalization_warning,
            "episodes": self.episodes,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def save_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "category", "episodes", "successes", "rate"])
            for category in sorted(self.per_category):
                row = self.per_category[category]
                writer.writerow(
                    [self.model_name, category, row["episodes"], row["successes"],
                     f"{row['rate']:.6f}"]
                )
            writer.writerow(
                [self.model_name, "overall", self.n_episodes,
                 sum(r["successes"] for r in self.per_category.values()),
                 f"{self.overall_rate:.6f}"]
            )


def aggregate_control(
    results: list,
    baseline: list | None = None,
    model_name: str = "model",
) -> ControlReport:
    """Fold per-episode results into per-category and overall success rates;
    normalize by the baseline's overall rate when one is supplied."""
    if not results:
        raise InvalidInputError("no episode results to aggregate")
    per_category: dict = {}
    episodes = []
    for r in results:
        row = per_category.setdefault(
            r.category, {"successes": 0, "episodes": 0, "rate": 0.0}
        )
        row["episodes"] += 1
        row["successes"] += int(r.success)
        episodes.append(
            {"task_id": r.task_id, "category": r.category, "success": r.success,
             "error": r.diagnostics.error}
        )
    for row in per_category.values():
        row["rate"] = row["successes"] / row["episodes"]
    overall = sum(int(r.success) for r in results) / len(results)

    normalized = None
    warning = False
    if baseline is not None:
        base_rate = sum(int(r.success) for r in baseline) / max(1, len(baseline))
        if base_rate > 0:
            normalized = overall / base_rate
        else:
            warning = True
    return ControlReport(
        model_name=model_name,
        per_category=per_category,
        overall_rate=overall,
        n_episodes=len(results),
        normalized_score=normalized,
        normalization_warning=warning,
        episodes=episodes,
    )


# ---------------------------------------------------------------------------
# Rank statistics and the study


def _ranks(values: list[float]) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: list[float], y: list[float]) -> float | None:
    """Spearman rank correlation; None when either input is constant."""
    if len(x) != len(y):
        raise InvalidInputError("spearman inputs must have equal length")
    if len(x) < 2:
        return None
    rx = _ranks(x)
    ry = _ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(np.mean(dx * dx))
    vy = float(np.mean(dy * dy))
    if vx == 0 or vy == 0:
        return None
    if np.array_equal(rx, ry):
        return 1.0
    r = float(np.mean(dx * dy) / np.sqrt(vx * vy))
    return float(np.clip(r, -1.0, 1.0))


# Higher is better for every metric except mse.
METRIC_DIRECTIONS = {"mse": -1.0, "psnr_db": 1.0, "ssim": 1.0}


@dataclass
class StudyReport:
    rows: list[dict]  # one per model: name, mse, psnr_db, ssim, success_rate
    correlations: dict  # metric -> Spearman vs success (or None)
    inversions: dict  # metric -> list of (better-metric model, worse-success model)
    flagged_metrics: list[str]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rows": self.rows,
            "correlations": self.correlations,
            "inversions": {k: [list(p) for p in v] for k, v in self.inversions.items()},
            "flagged_metrics": self.flagged_metrics,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def save_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "mse", "psnr_db", "ssim", "success_rate"])
            for row in self.rows:
                writer.writerow(
                    [row["model_name"], f"{row['mse']:.8f}", f"{row['psnr_db']:.4f}",
                     f"{row['ssim']:.6f}", f"{row['success_rate']:.6f}"]
                )


def build_study_report(
    metric_rows: list[ModelMetrics], control_rows: list[ControlReport]
) -> StudyReport:
    """Join per-model metrics with control results; compute rank correlations
    and flag metric/control rank inversions (a model pair where the metric
    ordering and the success ordering strictly disagree)."""
    rows = []
    for m, c in zip(metric_rows, control_rows):
        rows.append(
            {
                "model_name": m.model_name,
                "mse": m.mse,
                "psnr_db": m.psnr_db,
                "ssim": m.ssim,
                "success_rate": c.overall_rate,
            }
        )
    correlations: dict = {}
    inversions: dict = {}
    flagged = []
    success = [r["success_rate"] for r in rows]
    for metric, direction in METRIC_DIRECTIONS.items():
        vals = [r[metric] for r in rows]
        if len(rows) < 2:
            correlations[metric] = None
            inversions[metric] = []
            continue
        correlations[metric] = spearman([direction * v for v in vals], success)
        pairs = []
        for i in range(len(rows)):
            for j in range(len(rows)):
                if i == j:
                    continue
                metric_better = direction * vals[i] > direction * vals[j]
                success_worse = success[i] < success[j]
                if metric_better and success_worse:
                    pairs.append((rows[i]["model_name"], rows[j]["model_name"]))
        inversions[metric] = pairs
        if pairs:
            flagged.append(metric)
    return StudyReport(rows, correlations, inversions, flagged)
