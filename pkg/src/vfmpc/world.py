"""Deterministic 2-D planar pushing world.

A disc-shaped pusher moves inside a unit square arena by delta-position
actions and shoves simple rigid shapes (discs and axis-aligned squares)
around; objects never interact with each other.  Scenes are rasterized
without anti-aliasing so renders are bit-reproducible.

Determinism contract: all positions and actions are quantized to the
float32 lattice when they are created (sampling, stepping, loading), while
the arithmetic itself runs in float64.  Storing positions as f32 in the
dataset and task files is therefore lossless, and re-rendering a stored
state reproduces the stored frame bit for bit.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, GenerationError, InvalidInputError

# Object colors as 8-bit RGB; frames hold these values divided by 255 so
# they round-trip exactly through byte-valued image files.  The palette is
# bright and the background dark so that, under a squared-pixel planning
# cost, misplacing any object outweighs misplacing the (black) pusher.
DEFAULT_PALETTE = (
    (255, 40, 40),
    (40, 255, 40),
    (80, 120, 255),
    (255, 255, 40),
    (255, 40, 255),
    (40, 255, 255),
    (255, 255, 255),
    (255, 140, 0),
    (160, 255, 60),
    (255, 105, 180),
    (0, 200, 255),
    (200, 160, 255),
    (255, 200, 60),
)
DEFAULT_BACKGROUND = (70, 70, 70)
PUSHER_RGB = (0, 0, 0)

PALETTE_SIZE = 13


@dataclass(frozen=True)
class ObjectSpec:
    """Shape template: ``size`` is the radius of a disc or the half-extent
    of a square (also its collision radius against the pusher)."""

    kind: str
    size: float

    def __post_init__(self):
        if self.kind not in ("disc", "square"):
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")
        if self.size <= 0:
            raise ConfigurationError("object size must be positive")


DEFAULT_OBJECT_SPECS = (
    ObjectSpec("square", 0.05),
    ObjectSpec("square", 0.035),
    ObjectSpec("disc", 0.05),
    ObjectSpec("disc", 0.03),
)


@dataclass(frozen=True)
class WorldConfig:
    arena_side: float = 1.0
    pusher_radius: float = 0.06
    max_action_step: float = 0.08
    object_specs: tuple = DEFAULT_OBJECT_SPECS
    render_resolution: int = 64
    color_palette: tuple = DEFAULT_PALETTE
    background_color: tuple = DEFAULT_BACKGROUND

    def __post_init__(self):
        if self.arena_side <= 0:
            raise ConfigurationError("arena_side must be positive")
        if self.pusher_radius <= 0:
            raise ConfigurationError("pusher_radius must be positive")
        if self.max_action_step <= 0:
            raise ConfigurationError("max_action_step must be positive")
        if self.render_resolution < 16:
            raise ConfigurationError("render_resolution must be at least 16")
        if len(self.color_palette) != PALETTE_SIZE:
            raise ConfigurationError(
                f"color_palette must have exactly {PALETTE_SIZE} entries"
            )
        specs = tuple(
            s if isinstance(s, ObjectSpec) else ObjectSpec(*s)
            for s in self.object_specs
        )
        object.__setattr__(self, "object_specs", specs)
        for spec in specs:
            if spec.size >= self.arena_side / 4:
                raise ConfigurationError(
                    f"object size {spec.size} too large for arena {self.arena_side}"
                )

    @property
    def n_objects(self) -> int:
        return len(self.object_specs)

    @property
    def categories(self) -> list[str]:
        return [f"push_object_{k}" for k in range(self.n_objects)]

    def object_sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.object_specs], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "arena_side": self.arena_side,
            "pusher_radius": self.pusher_radius,
            "max_action_step": self.max_action_step,
            "object_specs": [[s.kind, s.size] for s in self.object_specs],
            "render_resolution": self.render_resolution,
            "color_palette": [list(c) for c in self.color_palette],
            "background_color": list(self.background_color),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        return cls(
            arena_side=d["arena_side"],
            pusher_radius=d["pusher_radius"],
            max_action_step=d["max_action_step"],
            object_specs=tuple(ObjectSpec(k, s) for k, s in d["object_specs"]),
            render_resolution=d["render_resolution"],
            color_palette=tuple(tuple(c) for c in d["color_palette"]),
            background_color=tuple(d["background_color"]),
        )


@dataclass
class ObjectState:
    spec_index: int
    color_index: int
    pos: np.ndarray  # (2,) float64 on the f32 lattice

    def copy(self) -> "ObjectState":
        return ObjectState(self.spec_index, self.color_index, self.pos.copy())


@dataclass
class SimState:
    """Full ground-truth configuration; the only source of success labels.

    Object slot j always holds the j-th configured shape (spec_index == j);
    batched dynamics and rendering rely on that alignment."""

    pusher_pos: np.ndarray  # (2,) float64 on the f32 lattice
    objects: list[ObjectState]
    step_count: int = 0

    def copy(self) -> "SimState":
        return SimState(
            self.pusher_pos.copy(), [o.copy() for o in self.objects], self.step_count
        )

    def object_positions(self) -> np.ndarray:
        if not self.objects:
            return np.empty((0, 2), dtype=np.float64)
        return np.array([o.pos for o in self.objects], dtype=np.float64)

    def color_indices(self) -> list[int]:
        return [o.color_index for o in self.objects]

    def to_dict(self) -> dict:
        return {
            "pusher_pos": [float(v) for v in self.pusher_pos],
            "objects": [
                {
                    "spec_index": o.spec_index,
                    "color_index": o.color_index,
                    "pos": [float(v) for v in o.pos],
                }
                for o in self.objects
            ],
            "step_count": self.step_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimState":
        return cls(
            pusher_pos=_snap(np.asarray(d["pusher_pos"], dtype=np.float64)),
            objects=[
                ObjectState(
                    o["spec_index"],
                    o["color_index"],
                    _snap(np.asarray(o["pos"], dtype=np.float64)),
                )
                for o in d["objects"]
            ],
            step_count=d["step_count"],
        )


def _snap(values: np.ndarray) -> np.ndarray:
    """Quantize to the float32 lattice, keeping float64 storage."""
    return values.astype(np.float32).astype(np.float64)


# Positions live on the float32 lattice, so margin checks need a float32-
# scale epsilon.
_MARGIN_EPS = 1e-6


def validate_state(state: SimState, config: WorldConfig) -> None:
    a = config.arena_side
    r = config.pusher_radius
    if not np.all(np.isfinite(state.pusher_pos)):
        raise InvalidInputError("non-finite pusher position")
    if np.any(state.pusher_pos < r - _MARGIN_EPS) or np.any(
        state.pusher_pos > a - r + _MARGIN_EPS
    ):
        raise InvalidInputError("pusher outside arena margins")
    if len(state.objects) != config.n_objects:
        raise InvalidInputError("object list does not match the world config")
    for j, obj in enumerate(state.objects):
        if obj.spec_index != j:
            raise InvalidInputError("object slots must follow the config order")
        if not 0 <= obj.color_index < PALETTE_SIZE:
            raise InvalidInputError("object color_index out of range")
        size = config.object_specs[obj.spec_index].size
        if np.any(obj.pos < size - _MARGIN_EPS) or np.any(
            obj.pos > a - size + _MARGIN_EPS
        ):
            raise InvalidInputError("object outside arena margins")


# ---------------------------------------------------------------------------
# Dynamics


def _advance(
    pusher: np.ndarray, objects: np.ndarray, deltas: np.ndarray, config: WorldConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of worlds one step.

    pusher [B,2], objects [B,n,2], deltas [B,2] -> new (pusher, objects).
    The scalar `step` delegates here with B=1, so single and batched rollouts
    are bit-identical by construction.
    """
    a = config.arena_side
    r = config.pusher_radius
    sizes = config.object_sizes()  # [n]

    delta = np.clip(deltas, -config.max_action_step, config.max_action_step)
    new_pusher = np.clip(pusher + delta, r, a - r)

    d = objects - new_pusher[:, None, :]  # [B,n,2]
    dist = np.sqrt(np.sum(d * d, axis=2))  # [B,n]
    min_dist = r + sizes[None, :]
    overlap = dist < min_dist

    # Contact normal; a (degenerate) exactly-coincident center resolves +x.
    safe = np.where(dist > 0.0, dist, 1.0)
    normal = d / safe[..., None]
    degenerate = (dist == 0.0)[..., None]
    normal = np.where(degenerate, np.array([1.0, 0.0]), normal)

    pushed = new_pusher[:, None, :] + normal * min_dist[..., None]
    new_objects = np.where(overlap[..., None], pushed, objects)
    lo = sizes[None, :, None]
    hi = a - sizes[None, :, None]
    new_objects = np.clip(new_objects, lo, hi)
    return _snap(new_pusher), _snap(new_objects)


def step(state: SimState, action: np.ndarray, config: WorldConfig) -> SimState:
    """One deterministic control step: move the pusher by the clipped delta,
    resolve pusher/object overlap along the contact normal, keep everything
    inside the arena."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (2,):
        raise InvalidInputError(f"action must have shape (2,), got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise InvalidInputError("action components must be finite")
    pusher, objects = _advance(
        state.pusher_pos[None, :],
        state.object_positions()[None, :, :],
        action[None, :],
        config,
    )
    new_objects = [
        ObjectState(o.spec_index, o.color_index, objects[0, j].copy())
        for j, o in enumerate(state.objects)
    ]
    return SimState(pusher[0].copy(), new_objects, state.step_count + 1)


# ---------------------------------------------------------------------------
# Rendering

_GRID_CACHE: dict[tuple, np.ndarray] = {}


def _pixel_centers(config: WorldConfig) -> np.ndarray:
    """World coordinate of pixel centers along one axis; pixel (row i, col j)
    sits at x = centers[j], y = centers[i].  float32: positions live on the
    f32 lattice, so the membership tests are exact-width comparisons."""
    key = (config.render_resolution, config.arena_side)
    cached = _GRID_CACHE.get(key)
    if cached is None:
        res = config.render_resolution
        centers = (np.arange(res, dtype=np.float64) + 0.5) * (config.arena_side / res)
        cached = centers.astype(np.float32)
        _GRID_CACHE[key] = cached
    return cached


def unit_from_u8(pixels: np.ndarray) -> np.ndarray:
    """Canonical byte -> [0,1] float32 conversion used everywhere."""
    return pixels.astype(np.float32) / np.float32(255.0)


def u8_from_unit(frame: np.ndarray) -> np.ndarray:
    return np.round(frame * np.float32(255.0)).astype(np.uint8)


def _color_lut_u8(color_indices: list[int], config: WorldConfig) -> np.ndarray:
    n = config.n_objects
    lut = np.empty((n + 2, 3), dtype=np.uint8)
    lut[0] = config.background_color
    for j, ci in enumerate(color_indices):
        lut[1 + j] = config.color_palette[ci]
    lut[n + 1] = PUSHER_RGB
    return lut


def _disc_mask(centers: np.ndarray, cx: np.ndarray, cy: np.ndarray, radius: float) -> np.ndarray:
    """[B,res,res] membership for a disc, built from separable axis terms:
    dy2 + dx2 <= r*r, evaluated as dy2 <= (r*r - dx2) so the broadcast pass
    writes only the boolean result."""
    dx2 = (centers[None, :] - cx[:, None].astype(np.float32)) ** 2  # [B,res]
    dy2 = (centers[None, :] - cy[:, None].astype(np.float32)) ** 2
    budget = np.float32(radius) * np.float32(radius) - dx2
    return dy2[:, :, None] <= budget[:, None, :]


def _square_mask(centers: np.ndarray, cx: np.ndarray, cy: np.ndarray, size: float) -> np.ndarray:
    half = np.float32(size)
    in_x = np.abs(centers[None, :] - cx[:, None].astype(np.float32)) <= half
    in_y = np.abs(centers[None, :] - cy[:, None].astype(np.float32)) <= half
    return in_y[:, :, None] & in_x[:, None, :]


def paint_frames(
    out: np.ndarray,
    pusher: np.ndarray,
    objects: np.ndarray,
    lut: np.ndarray,
    config: WorldConfig,
) -> None:
    """Rasterize a batch of states into ``out`` [B,res,res,C] (already filled
    with the background color): objects paint in list order (later occludes
    earlier), the pusher paints last.  A pixel belongs to a shape iff its
    center lies inside it (closed boundary)."""
    centers = _pixel_centers(config)
    channels = out.shape[-1]
    planes = [out[..., c] for c in range(channels)]

    def scatter(mask, color):
        # Scalar per-channel masked stores beat one vector-valued store.
        for c in range(channels):
            planes[c][mask] = color[c]

    for j, spec in enumerate(config.object_specs):
        cx = objects[:, j, 0]
        cy = objects[:, j, 1]
        if spec.kind == "disc":
            mask = _disc_mask(centers, cx, cy, spec.size)
        else:
            mask = _square_mask(centers, cx, cy, spec.size)
        scatter(mask, lut[1 + j])
    mask = _disc_mask(centers, pusher[:, 0], pusher[:, 1], config.pusher_radius)
    scatter(mask, lut[config.n_objects + 1])


def render_batch_u8(
    pusher: np.ndarray,
    objects: np.ndarray,
    color_indices: list[int],
    config: WorldConfig,
) -> np.ndarray:
    """Rasterize a batch of states sharing one color assignment.

    pusher [B,2], objects [B,n,2] -> frames [B,res,res,3] uint8."""
    res = config.render_resolution
    lut = _color_lut_u8(color_indices, config)
    out = np.empty((pusher.shape[0], res, res, 3), dtype=np.uint8)
    out[...] = lut[0]
    paint_frames(out, pusher, objects, lut, config)
    return out


def render_batch(
    pusher: np.ndarray,
    objects: np.ndarray,
    color_indices: list[int],
    config: WorldConfig,
) -> np.ndarray:
    """As render_batch_u8 but in the engine's [0,1] float32 currency."""
    res = config.render_resolution
    lut = unit_from_u8(_color_lut_u8(color_indices, config))
    out = np.empty((pusher.shape[0], res, res, 3), dtype=np.float32)
    out[...] = lut[0]
    paint_frames(out, pusher, objects, lut, config)
    return out


def render(state: SimState, config: WorldConfig) -> np.ndarray:
    """Rasterize one state to a [res,res,3] float32 frame in [0,1]."""
    frames = render_batch(
        state.pusher_pos[None, :],
        state.object_positions()[None, :, :],
        state.color_indices(),
        config,
    )
    return frames[0]


# ---------------------------------------------------------------------------
# Scripted noisy-expert pushing


@dataclass
class PushPlan:
    """One commanded push: drive behind the target object, then shove it a
    fixed distance along ``theta``.  ``phase2`` latches once the staging
    point has been reached."""

    target_index: int
    theta: float
    push_distance: float = 0.25
    object_start: np.ndarray = field(default=None)
    phase2: bool = False

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])


def make_push_plan(
    state: SimState, target_index: int, theta: float, push_distance: float = 0.25
) -> PushPlan:
    return PushPlan(
        target_index=target_index,
        theta=theta,
        push_distance=push_distance,
        object_start=state.objects[target_index].pos.copy(),
    )


STAGING_OFFSET = 0.01
PHASE_SWITCH_DIST = 0.02
POLICY_GAIN = 0.7


def scripted_push_policy(
    state: SimState, plan: PushPlan, config: WorldConfig
) -> np.ndarray:
    """Two-phase proportional controller; returns a clipped delta action.

    Phase 1 drives the pusher to a staging point behind the object; phase 2
    (latched) drives through the object's start toward the push target.
    """
    direction = plan.direction
    obj = state.objects[plan.target_index]
    size = config.object_specs[obj.spec_index].size
    staging = obj.pos - (config.pusher_radius + size + STAGING_OFFSET) * direction

    if not plan.phase2:
        if np.linalg.norm(state.pusher_pos - staging) <= PHASE_SWITCH_DIST:
            plan.phase2 = True

    if plan.phase2:
        target = plan.object_start + plan.push_distance * direction
    else:
        target = staging

    raw = POLICY_GAIN * (target - state.pusher_pos)
    # Scale into the per-axis action box instead of clipping componentwise:
    # componentwise clipping would bend the commanded direction and make the
    # pusher shove the object off its push line.
    peak = np.max(np.abs(raw))
    if peak > config.max_action_step:
        raw = raw * (config.max_action_step / peak)
    return raw


# ---------------------------------------------------------------------------
# Random initial states

MIN_CLEARANCE = 0.02
_MAX_PLACEMENT_TRIES = 1000


def sample_initial_state(config: WorldConfig, rng: np.random.Generator) -> SimState:
    """Random non-overlapping scene: colors first, then object positions by
    rejection, then a pusher position clear of every object."""
    sizes = config.object_sizes()
    colors = [int(c) for c in rng.integers(0, PALETTE_SIZE, size=config.n_objects)]

    positions: list[np.ndarray] = []
    for j in range(config.n_objects):
        for attempt in range(_MAX_PLACEMENT_TRIES):
            pos = rng.uniform(sizes[j], config.arena_side - sizes[j], size=2)
            ok = all(
                np.linalg.norm(pos - positions[i]) > sizes[i] + sizes[j] + MIN_CLEARANCE
                for i in range(j)
            )
            if ok:
                positions.append(_snap(pos))
                break
        else:
            raise GenerationError("could not place objects without overlap")

    r = config.pusher_radius
    for attempt in range(_MAX_PLACEMENT_TRIES):
        pusher = rng.uniform(r, config.arena_side - r, size=2)
        ok = all(
            np.linalg.norm(pusher - positions[j]) > r + sizes[j] + MIN_CLEARANCE
            for j in range(config.n_objects)
        )
        if ok:
            break
    else:
        raise GenerationError("could not place the pusher clear of objects")

    objects = [
        ObjectState(spec_index=j, color_index=colors[j], pos=positions[j])
        for j in range(config.n_objects)
    ]
    return SimState(pusher_pos=_snap(pusher), objects=objects, step_count=0)
