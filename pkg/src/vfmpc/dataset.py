"""Trajectory dataset files ("VPDS"): scripted noisy-expert pushing episodes.

Binary little-endian layout:
  magic "VPDS" | u8 version=1 | u32 n_episodes | u32 traj_len | u32 H | u32 W
  | u32 action_dim | u32 n_categories
then per episode:
  u8  frames            [traj_len, H, W, 3]
  f32 actions           [traj_len-1, action_dim]
  f32 object_positions  [traj_len, n_objects, 2]
  f32 pusher_positions  [traj_len, 2]
  u8  success_labels    [traj_len, n_categories]

The number of objects equals the number of categories (one push category
per object), which is what makes the per-episode record self-describing.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError, ProtocolError
from . import world as w
from .tasks import DEFAULT_SUCCESS_RADIUS

MAGIC = b"VPDS"
VERSION = 1
ACTION_DIM = 2
_HEADER = struct.Struct("<4sBIIIIII")


@dataclass
class EpisodeRecord:
    frames: np.ndarray  # [T,H,W,3] uint8
    actions: np.ndarray  # [T-1,A] float32
    object_positions: np.ndarray  # [T,n,2] float32
    pusher_positions: np.ndarray  # [T,2] float32
    success_labels: np.ndarray  # [T,C] uint8

    @property
    def traj_len(self) -> int:
        return self.frames.shape[0]

    def frames_unit(self) -> np.ndarray:
        return w.unit_from_u8(self.frames)


@dataclass
class DatasetHeader:
    n_episodes: int
    traj_len: int
    height: int
    width: int
    action_dim: int
    n_categories: int

    @property
    def episode_nbytes(self) -> int:
        t, h, wd, a, c = (
            self.traj_len,
            self.height,
            self.width,
            self.action_dim,
            self.n_categories,
        )
        n = self.n_categories  # one category per object
        return (
            t * h * wd * 3
            + (t - 1) * a * 4
            + t * n * 2 * 4
            + t * 2 * 4
            + t * c
        )


class DatasetReader:
    """Random-access reader; episodes are fixed-size records after the header."""

    def __init__(self, path: Path):
        self.path = Path(path)
        with open(self.path, "rb") as f:
            raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ProtocolError(f"{path}: truncated dataset header")
        magic, version, n_ep, traj_len, h, wd, a, c = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ProtocolError(f"{path}: bad dataset magic {magic!r}")
        if version != VERSION:
            raise ProtocolError(f"{path}: unsupported dataset version {version}")
        self.header = DatasetHeader(n_ep, traj_len, h, wd, a, c)

    def __len__(self) -> int:
        return self.header.n_episodes

    def episode(self, index: int) -> EpisodeRecord:
        hd = self.header
        if not 0 <= index < hd.n_episodes:
            raise InvalidInputError(f"episode index {index} out of range")
        offset = _HEADER.size + index * hd.episode_nbytes
        with open(self.path, "rb") as f:
            f.seek(offset)
            raw = f.read(hd.episode_nbytes)
        if len(raw) != hd.episode_nbytes:
            raise ProtocolError(f"{self.path}: truncated episode {index}")
        t, h, wd, a, c = hd.traj_len, hd.height, hd.width, hd.action_dim, hd.n_categories
        n = c
        sizes = [t * h * wd * 3, (t - 1) * a * 4, t * n * 2 * 4, t * 2 * 4, t * c]
        parts = []
        pos = 0
        for s in sizes:
            parts.append(raw[pos : pos + s])
            pos += s
        return EpisodeRecord(
            frames=np.frombuffer(parts[0], dtype=np.uint8).reshape(t, h, wd, 3),
            actions=np.frombuffer(parts[1], dtype="<f4").reshape(t - 1, a),
            object_positions=np.frombuffer(parts[2], dtype="<f4").reshape(t, n, 2),
            pusher_positions=np.frombuffer(parts[3], dtype="<f4").reshape(t, 2),
            success_labels=np.frombuffer(parts[4], dtype=np.uint8).reshape(t, c),
        )

    def episodes(self):
        for i in range(len(self)):
            yield self.episode(i)


def write_dataset(
    path: Path, header: DatasetHeader, episodes: list[EpisodeRecord]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                MAGIC,
                VERSION,
                header.n_episodes,
                header.traj_len,
                header.height,
                header.width,
                header.action_dim,
                header.n_categories,
            )
        )
        for ep in episodes:
            f.write(ep.frames.tobytes())
            f.write(ep.actions.astype("<f4").tobytes())
            f.write(ep.object_positions.astype("<f4").tobytes())
            f.write(ep.pusher_positions.astype("<f4").tobytes())
            f.write(ep.success_labels.tobytes())


def collect_episode(
    config: w.WorldConfig,
    rng: np.random.Generator,
    noise_sigma: float = 0.05,
    traj_len: int = 35,
    success_radius: float = DEFAULT_SUCCESS_RADIUS,
) -> tuple[EpisodeRecord, w.PushPlan]:
    """One noisy scripted push: returns the recorded episode and the plan it
    executed.  Stream consumption order: initial scene, target index, push
    direction, then one 2-vector noise draw per control step."""
    n = config.n_objects
    res = config.render_resolution
    init = w.sample_initial_state(config, rng)
    target = int(rng.integers(0, n))
    theta = float(rng.uniform(0.0, np.pi))
    plan = w.make_push_plan(init, target, theta)
    goal_point = plan.object_start + plan.push_distance * plan.direction

    frames = np.empty((traj_len, res, res, 3), dtype=np.uint8)
    actions = np.empty((traj_len - 1, ACTION_DIM), dtype=np.float32)
    obj_pos = np.empty((traj_len, n, 2), dtype=np.float32)
    pusher_pos = np.empty((traj_len, 2), dtype=np.float32)
    labels = np.zeros((traj_len, n), dtype=np.uint8)

    state = init
    for t in range(traj_len):
        frames[t] = w.u8_from_unit(w.render(state, config))
        obj_pos[t] = state.object_positions()
        pusher_pos[t] = state.pusher_pos
        near = np.linalg.norm(state.objects[target].pos - goal_point)
        labels[t, target] = 1 if near <= success_radius else 0
        if t == traj_len - 1:
            break
        scripted = w.scripted_push_policy(state, plan, config)
        noise = rng.normal(0.0, noise_sigma, size=ACTION_DIM)
        executed = np.clip(
            scripted + noise, -config.max_action_step, config.max_action_step
        ).astype(np.float32)
        actions[t] = executed
        state = w.step(state, executed.astype(np.float64), config)

    return EpisodeRecord(frames, actions, obj_pos, pusher_pos, labels), plan


def collect_dataset(
    config: w.WorldConfig,
    n_traj: int,
    out_path: Path,
    noise_sigma: float = 0.05,
    traj_len: int = 35,
    seed: int = 0,
    success_radius: float = DEFAULT_SUCCESS_RADIUS,
) -> DatasetHeader:
    """Roll the scripted push policy with Gaussian action noise and record
    every trajectory, successful or not.

    Per-state success labels mark, for the pushed object's category, whether
    that object currently sits within the success ball around the commanded
    push target; other categories stay negative (nothing was commanded for
    them).
    """
    if n_traj < 0:
        raise ConfigurationError("n_traj must be non-negative")
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be non-negative")
    if traj_len < 2:
        raise ConfigurationError("traj_len must be at least 2")

    rng = np.random.default_rng(seed)
    episodes: list[EpisodeRecord] = []
    for _ in range(n_traj):
        record, _plan = collect_episode(
            config, rng, noise_sigma=noise_sigma, traj_len=traj_len,
            success_radius=success_radius,
        )
        episodes.append(record)

    header = DatasetHeader(
        n_episodes=n_traj,
        traj_len=traj_len,
        height=config.render_resolution,
        width=config.render_resolution,
        action_dim=ACTION_DIM,
        n_categories=config.n_objects,
    )
    write_dataset(out_path, header, episodes)
    return header


# ---------------------------------------------------------------------------
# Ground-truth state recovery (for evaluating state-privileged models on
# stored trajectories)


def recover_colors(record: EpisodeRecord, config: w.WorldConfig) -> list[int]:
    """Read each object's color from the first frame.

    Initial scenes are sampled with clearance between all entities, so the
    pixel under each object's center at t=0 shows that object's own color.
    """
    res = config.render_resolution
    frame0 = record.frames[0]
    palette = np.array(config.color_palette, dtype=np.int32)
    colors = []
    for j in range(config.n_objects):
        x, y = record.object_positions[0, j]
        col = min(int(x / config.arena_side * res), res - 1)
        row = min(int(y / config.arena_side * res), res - 1)
        pixel = frame0[row, col].astype(np.int32)
        match = np.where(np.all(palette == pixel, axis=1))[0]
        if match.size:
            colors.append(int(match[0]))
        else:
            # Occluded center: fall back to the nearest palette entry.
            colors.append(int(np.argmin(np.sum((palette - pixel) ** 2, axis=1))))
    return colors


def recover_state(
    record: EpisodeRecord, t: int, config: w.WorldConfig, colors: list[int] | None = None
) -> w.SimState:
    """Rebuild the exact SimState at step ``t`` of a stored episode."""
    if colors is None:
        colors = recover_colors(record, config)
    objects = [
        w.ObjectState(
            spec_index=j,
            color_index=colors[j],
            pos=record.object_positions[t, j].astype(np.float64),
        )
        for j in range(config.n_objects)
    ]
    return w.SimState(
        pusher_pos=record.pusher_positions[t].astype(np.float64),
        objects=objects,
        step_count=t,
    )
