"""Reference forward models served over the protocol.

Persistence repeats the last context frame; the linear model applies one
learned per-pixel affine map (previous pixel value, the step's action,
bias) autoregressively.  Both are deliberately tiny: they exist to prove
the serving contract, not to predict well.
"""

import struct
from pathlib import Path

import numpy as np

WEIGHTS_MAGIC = b"VPLW"
WEIGHTS_VERSION = 1

DATASET_MAGIC = b"VPDS"
_DATASET_HEADER = struct.Struct("<4sBIIIIII")


class PersistenceModel:
    """Every predicted frame is the final context frame."""

    name = "persistence"

    def predict(self, context: np.ndarray, actions: np.ndarray, horizon: int) -> np.ndarray:
        batch = actions.shape[0]
        last = context[-1]
        return np.broadcast_to(
            last, (batch, horizon) + last.shape
        ).astype(np.float32, copy=True)


class LinearModel:
    """Per-pixel affine predictor: next = clip(w_p * prev + w . action + b).

    The same coefficients apply at every pixel and channel; rollouts feed
    each predicted frame back in autoregressively.
    """

    name = "linear"

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.shape[0] < 3:
            raise ValueError("linear weights must be [prev, action..., bias]")
        self.weights = weights

    @property
    def action_dim(self) -> int:
        return self.weights.shape[0] - 2

    def predict(self, context: np.ndarray, actions: np.ndarray, horizon: int) -> np.ndarray:
        batch = actions.shape[0]
        context_len = context.shape[0]
        w_prev = self.weights[0]
        w_act = self.weights[1:-1]
        w_bias = self.weights[-1]

        frame = np.broadcast_to(context[-1], (batch,) + context[-1].shape).astype(np.float64)
        planned = actions[:, context_len - 1 :, :].astype(np.float64)
        out = np.empty((batch, horizon) + context[-1].shape, dtype=np.float32)
        for t in range(horizon):
            drive = planned[:, t, :] @ w_act + w_bias  # [B]
            frame = np.clip(w_prev * frame + drive[:, None, None, None], 0.0, 1.0)
            out[:, t] = frame.astype(np.float32)
            frame = out[:, t].astype(np.float64)
        return out


def save_weights(path: Path, weights: np.ndarray) -> None:
    weights = np.asarray(weights, dtype="<f4")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<BI", WEIGHTS_VERSION, weights.shape[0]))
        f.write(weights.tobytes())


def load_weights(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"{path}: bad weights magic {magic!r}")
        version, n = struct.unpack("<BI", f.read(5))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"{path}: unsupported weights version {version}")
        return np.frombuffer(f.read(4 * n), dtype="<f4").astype(np.float64)


# ---------------------------------------------------------------------------
# Training data access (self-contained reader for the trajectory files)


def read_dataset(path: Path):
    """-> (frames [N,T,H,W,3] uint8, actions [N,T-1,A] float32)"""
    with open(path, "rb") as f:
        raw = f.read(_DATASET_HEADER.size)
        magic, version, n_ep, traj_len, h, width, a_dim, n_cat = _DATASET_HEADER.unpack(raw)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: bad dataset magic {magic!r}")
        if version != 1:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        frames = np.empty((n_ep, traj_len, h, width, 3), np.uint8)
        actions = np.empty((n_ep, traj_len - 1, a_dim), np.float32)
        frame_bytes = traj_len * h * width * 3
        action_bytes = (traj_len - 1) * a_dim * 4
        skip = traj_len * n_cat * 2 * 4 + traj_len * 2 * 4 + traj_len * n_cat
        for i in range(n_ep):
            frames[i] = np.frombuffer(f.read(frame_bytes), np.uint8).reshape(
                traj_len, h, width, 3
            )
            actions[i] = np.frombuffer(f.read(action_bytes), "<f4").reshape(
                traj_len - 1, a_dim
            )
            f.seek(skip, 1)
    return frames, actions


def fit_linear(
    dataset_path: Path, steps: int = 200_000, seed: int = 0
) -> np.ndarray:
    """Least-squares fit of the per-pixel affine map over sampled pixel
    transitions; ``steps`` caps the number of sampled rows.  Deterministic
    given the seed."""
    frames, actions = read_dataset(dataset_path)
    if frames.shape[0] == 0:
        raise ValueError("dataset is empty; nothing to fit")
    n_ep, traj_len = frames.shape[:2]
    h, width = frames.shape[2:4]
    a_dim = actions.shape[2]

    rng = np.random.default_rng(seed)
    rows = min(steps, n_ep * (traj_len - 1) * h * width)
    ep = rng.integers(0, n_ep, rows)
    t = rng.integers(0, traj_len - 1, rows)
    py = rng.integers(0, h, rows)
    px = rng.integers(0, width, rows)
    ch = rng.integers(0, 3, rows)

    prev = frames[ep, t, py, px, ch].astype(np.float64) / 255.0
    nxt = frames[ep, t + 1, py, px, ch].astype(np.float64) / 255.0
    act = actions[ep, t].astype(np.float64)

    design = np.concatenate(
        [prev[:, None], act, np.ones((rows, 1))], axis=1
    )  # [rows, 1+A+1]
    solution, *_ = np.linalg.lstsq(design, nxt, rcond=None)
    return solution


def one_step_mse(model, frames_u8: np.ndarray, actions: np.ndarray) -> float:
    """Mean squared one-step prediction error over a trajectory array."""
    frames = frames_u8.astype(np.float64) / 255.0
    total = 0.0
    count = 0
    for i in range(frames.shape[0]):
        for t in range(frames.shape[1] - 1):
            context = frames[i, t : t + 1].astype(np.float32)
            acts = actions[i, t : t + 1][None, :, :]
            predicted = model.predict(context, acts, 1)[0, 0]
            total += float(np.mean((predicted.astype(np.float64) - frames[i, t + 1]) ** 2))
            count += 1
    return total / count
