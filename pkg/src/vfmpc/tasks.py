"""Benchmark task instances: initial state + goal image pairs.

Goals are collected from actual noiseless scripted rollouts so every goal
image is reachable within the episode horizon by construction.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GenerationError, ProtocolError
from . import world as w

DEFAULT_SUCCESS_RADIUS = 0.085
TASK_EPISODE_HORIZON = 15
MAX_PUSH_DISTANCE = 0.10
WALL_CLEARANCE = 0.08
_MAX_CONSECUTIVE_REJECTIONS = 100

IMAGE_MAGIC = b"VPIM"
IMAGE_VERSION = 1


@dataclass
class TaskInstance:
    id: str
    category: str
    init_state: w.SimState
    goal_frame: np.ndarray  # [res,res,3] float32, equals render(goal_state)
    goal_state: w.SimState
    success_radius: float = DEFAULT_SUCCESS_RADIUS


def category_target_index(category: str, config: w.WorldConfig) -> int:
    prefix = "push_object_"
    if category.startswith(prefix):
        try:
            k = int(category[len(prefix):])
        except ValueError:
            k = -1
        if 0 <= k < config.n_objects:
            return k
    raise ConfigurationError(f"unrecognized task category {category!r}")


def success(state: w.SimState, task: TaskInstance, config: w.WorldConfig) -> bool:
    """True iff the category's target object sits within the closed success
    ball around its goal position."""
    k = category_target_index(task.category, config)
    dist = np.linalg.norm(state.objects[k].pos - task.goal_state.objects[k].pos)
    return bool(dist <= task.success_radius)


def _staged_initial_state(
    config: w.WorldConfig, rng: np.random.Generator, target: int, theta: float
) -> w.SimState | None:
    """Random scene with the pusher poised at the push staging point.

    Starting episodes in pushing position keeps the goal (a 15-step scripted
    rollout from here) local to the initial scene, so the goal image always
    overlaps the reachable footprint and the pixel cost carries signal from
    the first control step.  Returns None when the staging point is illegal.
    """
    state = w.sample_initial_state(config, rng)
    sizes = config.object_sizes()
    direction = np.array([np.cos(theta), np.sin(theta)])
    staging = state.objects[target].pos - (
        config.pusher_radius + sizes[target] + w.STAGING_OFFSET
    ) * direction
    r = config.pusher_radius
    if np.any(staging < r) or np.any(staging > config.arena_side - r):
        return None
    for j, obj in enumerate(state.objects):
        if j == target:
            continue
        if np.linalg.norm(staging - obj.pos) <= r + sizes[j] + w.MIN_CLEARANCE:
            return None
    state.pusher_pos = staging.astype(np.float32).astype(np.float64)
    return state


def generate_task_instances(
    config: w.WorldConfig,
    n_per_category: int = 25,
    seed: int = 0,
    success_radius: float = DEFAULT_SUCCESS_RADIUS,
    episode_horizon: int = TASK_EPISODE_HORIZON,
    max_push_distance: float = MAX_PUSH_DISTANCE,
    wall_clearance: float = WALL_CLEARANCE,
) -> list[TaskInstance]:
    """Sample instances per category by rolling the noiseless scripted push
    for the episode horizon.

    A candidate scene is kept only when the target object actually moved
    beyond the success radius (no goal is trivially satisfied at the start)
    and when the push corridor stays clear of the arena walls, where pushes
    are unrecoverable.  The commanded push distance varies per instance so
    the benchmark mixes short and long pushes.
    """
    if n_per_category < 1:
        raise ConfigurationError("n_per_category must be at least 1")
    rng = np.random.default_rng(seed)
    sizes = config.object_sizes()
    instances: list[TaskInstance] = []
    for k in range(config.n_objects):
        category = f"push_object_{k}"
        produced = 0
        rejections = 0
        while produced < n_per_category:
            accepted = False
            theta = float(rng.uniform(0.0, np.pi))
            init = _staged_initial_state(config, rng, k, theta)
            if init is not None:
                distance = float(rng.uniform(0.0, max_push_distance))
                plan = w.make_push_plan(init, k, theta, push_distance=distance)
                state = init.copy()
                for _ in range(episode_horizon):
                    action = w.scripted_push_policy(state, plan, config)
                    state = w.step(state, action, config)
                moved = np.linalg.norm(state.objects[k].pos - init.objects[k].pos)
                lo = sizes[k] + wall_clearance
                hi = config.arena_side - sizes[k] - wall_clearance
                corridor_clear = all(
                    lo <= p <= hi
                    for p in (*init.objects[k].pos, *state.objects[k].pos)
                )
                accepted = moved > success_radius and corridor_clear
            if not accepted:
                rejections += 1
                if rejections > _MAX_CONSECUTIVE_REJECTIONS:
                    raise GenerationError(
                        f"{category}: {rejections} consecutive rejected scenes; "
                        "the world configuration looks unpushable"
                    )
                continue
            rejections = 0
            instances.append(
                TaskInstance(
                    id=f"{category}-{produced:03d}",
                    category=category,
                    init_state=init,
                    goal_frame=w.render(state, config),
                    goal_state=state,
                    success_radius=success_radius,
                )
            )
            produced += 1
    return instances


# ---------------------------------------------------------------------------
# Raw image files ("VPIM")


def write_image(path: Path, frame: np.ndarray) -> None:
    pixels = w.u8_from_unit(frame)
    h, width, c = pixels.shape
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(struct.pack("<BIII", IMAGE_VERSION, h, width, c))
        f.write(pixels.tobytes())


def read_image(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != IMAGE_MAGIC:
            raise ProtocolError(f"{path}: bad image magic {magic!r}")
        version, h, width, c = struct.unpack("<BIII", f.read(13))
        if version != IMAGE_VERSION:
            raise ProtocolError(f"{path}: unsupported image version {version}")
        data = f.read(h * width * c)
        if len(data) != h * width * c:
            raise ProtocolError(f"{path}: truncated image payload")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(h, width, c)
    return w.unit_from_u8(pixels)


# ---------------------------------------------------------------------------
# Task-instance files (JSON document + adjacent goal images)


def save_task_instances(
    path: Path, config: w.WorldConfig, instances: list[TaskInstance]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": config.to_dict(), "instances": []}
    for inst in instances:
        frame_name = f"{inst.id}.vpim"
        write_image(path.parent / frame_name, inst.goal_frame)
        doc["instances"].append(
            {
                "id": inst.id,
                "category": inst.category,
                "init_state": inst.init_state.to_dict(),
                "goal_state": inst.goal_state.to_dict(),
                "success_radius": inst.success_radius,
                "goal_frame_file": frame_name,
            }
        )
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_task_instances(path: Path) -> tuple[w.WorldConfig, list[TaskInstance]]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    config = w.WorldConfig.from_dict(doc["config"])
    instances = []
    for entry in doc["instances"]:
        instances.append(
            TaskInstance(
                id=entry["id"],
                category=entry["category"],
                init_state=w.SimState.from_dict(entry["init_state"]),
                goal_frame=read_image(path.parent / entry["goal_frame_file"]),
                goal_state=w.SimState.from_dict(entry["goal_state"]),
                success_radius=entry["success_radius"],
            )
        )
    return config, instances
