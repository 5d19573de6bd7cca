"""Forward models: the ground-truth oracle, synthetic degradations of it,
and ensembles with disagreement computation.

Every model answers one batched forward-prediction call: given shared
context frames and B candidate action sequences, return B rollouts of
predicted frames.  State-privileged models (oracle and its degradations)
additionally receive an opaque simulator-state token that never crosses
the wire protocol; remote models see frames and actions only.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from . import world as w

DEFAULT_CONTEXT_LEN = 2
DEFAULT_HORIZON = 10


@dataclass(frozen=True)
class HiddenStateToken:
    """Opaque snapshot of the true simulator state at planning time."""

    state: w.SimState


class PredictionRequest:
    """Shared context frames plus a batch of candidate action sequences.

    context_frames: [T_c, H, W, 3] float32 in [0, 1]
    actions:        [B, T_c - 1 + horizon, A] float32
    """

    def __init__(self, context_frames: np.ndarray, actions: np.ndarray, horizon: int):
        context_frames = np.asarray(context_frames, dtype=np.float32)
        actions = np.asarray(actions, dtype=np.float32)
        if context_frames.ndim != 4 or context_frames.shape[-1] != 3:
            raise InvalidInputError(
                f"context must be [T_c,H,W,3], got {context_frames.shape}"
            )
        if actions.ndim != 3:
            raise InvalidInputError(f"actions must be [B,T,A], got {actions.shape}")
        t_c = context_frames.shape[0]
        if actions.shape[0] < 1:
            raise InvalidInputError("batch must contain at least one candidate")
        if actions.shape[1] != t_c - 1 + horizon:
            raise InvalidInputError(
                f"action length {actions.shape[1]} != T_c-1+horizon = {t_c - 1 + horizon}"
            )
        if not np.all(np.isfinite(actions)):
            raise InvalidInputError("actions must be finite")
        cmin, cmax = float(context_frames.min()), float(context_frames.max())
        if cmin < 0.0 or cmax > 1.0:
            raise InvalidInputError("context frame values must lie in [0,1]")
        self.context_frames = context_frames
        self.actions = actions
        self.horizon = horizon

    @property
    def batch(self) -> int:
        return self.actions.shape[0]

    @property
    def context_len(self) -> int:
        return self.context_frames.shape[0]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[2]

    def planned_actions(self) -> np.ndarray:
        """The last ``horizon`` actions: those applied from the current state."""
        return self.actions[:, self.context_len - 1 :, :]

    def with_actions(self, actions: np.ndarray) -> "PredictionRequest":
        return PredictionRequest(self.context_frames, actions, self.horizon)

    def digest(self) -> int:
        """64-bit content hash used to seed request-deterministic noise."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.context_frames.tobytes())
        h.update(self.actions.tobytes())
        return int.from_bytes(h.digest(), "little")


@dataclass
class PredictionResponse:
    """Predicted rollouts [B, horizon, H, W, 3] float32 in [0, 1].

    In-process models own their output buffer: the frames array is valid
    until the next predict() on the same model instance; copy to retain.
    """

    frames: np.ndarray


class _BufferPool:
    """One cached array per shape; avoids re-faulting ~100 MB allocations on
    every planning step."""

    def __init__(self):
        self._buf = None

    def get(self, shape, dtype=np.float32) -> np.ndarray:
        if self._buf is None or self._buf.shape != shape or self._buf.dtype != dtype:
            self._buf = np.empty(shape, dtype=dtype)
        return self._buf


class OracleModel:
    """Uses the simulator itself as the dynamics, keeping the rest of the
    planning pipeline unchanged; the performance upper bound."""

    kind = "oracle"
    requires_state = True

    def __init__(self, config: w.WorldConfig, name: str = "oracle"):
        self.config = config
        self.name = name
        self._frames = _BufferPool()

    def predict(
        self, request: PredictionRequest, token: HiddenStateToken | None = None
    ) -> PredictionResponse:
        if token is None:
            raise InvalidInputError("oracle prediction requires a state token")
        state = token.state
        batch = request.batch
        horizon = request.horizon
        res = self.config.render_resolution

        pusher = np.repeat(state.pusher_pos[None, :], batch, axis=0)
        objects = np.repeat(state.object_positions()[None, :, :], batch, axis=0)
        colors = state.color_indices()
        planned = request.planned_actions().astype(np.float64)

        lut = w.unit_from_u8(w._color_lut_u8(colors, self.config))
        frames = self._frames.get((batch, horizon, res, res, 3))
        frames[...] = lut[0]
        for t in range(horizon):
            pusher, objects = w._advance(pusher, objects, planned[:, t, :], self.config)
            w.paint_frames(frames[:, t], pusher, objects, lut, self.config)
        return PredictionResponse(frames)


def _blur_matrix(n: int, sigma: float) -> np.ndarray:
    """Row-stochastic [n,n] matrix applying a 1-D Gaussian truncated at
    3 sigma with edge clamping (out-of-range taps fold onto the border)."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    matrix = np.zeros((n, n), dtype=np.float32)
    for i in range(n):
        for k, kv in enumerate(kernel):
            j = min(max(i + k - radius, 0), n - 1)
            matrix[i, j] += kv
    return matrix


_BLUR_CACHE: dict[tuple[int, float], np.ndarray] = {}


def gaussian_blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes of [..., H, W, C].

    The kernel is truncated at 3 sigma and edges are clamped (nearest-pixel
    padding).  Each axis is applied as one banded matrix product.
    """
    if sigma <= 0:
        return frames
    frames = np.asarray(frames, dtype=np.float32)
    h, width, channels = frames.shape[-3:]
    lead = frames.shape[:-3]

    key_h = (h, float(sigma))
    if key_h not in _BLUR_CACHE:
        _BLUR_CACHE[key_h] = _blur_matrix(h, sigma)
    key_w = (width, float(sigma))
    if key_w not in _BLUR_CACHE:
        _BLUR_CACHE[key_w] = _blur_matrix(width, sigma)
    blur_h = _BLUR_CACHE[key_h]
    blur_w = _BLUR_CACHE[key_w]

    x = frames.reshape(-1, h, width * channels)
    x = np.matmul(blur_h, x)  # blur down columns
    x = x.reshape(-1, h, width, channels).transpose(0, 1, 3, 2).reshape(-1, width)
    x = np.matmul(x, blur_w.T)  # blur along rows
    x = x.reshape(-1, h, channels, width).transpose(0, 1, 3, 2).reshape(
        lead + (h, width, channels)
    )
    return np.clip(x, 0.0, 1.0)


DEGRADATION_KINDS = ("blur", "pixel_noise", "action_blind", "lagged")


class DegradedModel:
    """Controlled corruption of an oracle: decouples how good predictions
    look from how faithfully they track actions."""

    kind = "degraded"
    requires_state = True

    def __init__(self, base: OracleModel, degradation: str, strength: float, seed: int):
        if degradation not in DEGRADATION_KINDS:
            raise ConfigurationError(f"unknown degradation kind {degradation!r}")
        if strength < 0:
            raise ConfigurationError("degradation strength must be non-negative")
        self.base = base
        self.degradation = degradation
        self.strength = strength
        self.seed = seed
        self.name = f"{degradation}:{strength:g}" if degradation in ("blur", "pixel_noise") else degradation
        self._frames = _BufferPool()

    def _own(self, base_frames: np.ndarray) -> np.ndarray:
        """Copy base output into this member's buffer so ensemble members
        sharing one base never alias each other's responses."""
        out = self._frames.get(base_frames.shape)
        np.copyto(out, base_frames)
        return out

    def predict(
        self, request: PredictionRequest, token: HiddenStateToken | None = None
    ) -> PredictionResponse:
        if self.degradation == "action_blind":
            blind = request.with_actions(np.zeros_like(request.actions))
            return PredictionResponse(self._own(self.base.predict(blind, token).frames))

        if self.degradation == "lagged":
            actions = request.actions.copy()
            t_c = request.context_len
            planned = actions[:, t_c - 1 :, :]
            shifted = np.concatenate(
                [np.zeros_like(planned[:, :1, :]), planned[:, :-1, :]], axis=1
            )
            actions[:, t_c - 1 :, :] = shifted
            response = self.base.predict(request.with_actions(actions), token)
            return PredictionResponse(self._own(response.frames))

        response = self.base.predict(request, token)
        if self.degradation == "blur":
            if self.strength == 0:
                return PredictionResponse(self._own(response.frames))
            out = self._frames.get(response.frames.shape)
            out[:] = gaussian_blur(response.frames, self.strength)
            return PredictionResponse(out)

        # pixel_noise: deterministic per (request content, member seed)
        if self.strength == 0:
            return PredictionResponse(self._own(response.frames))
        rng = np.random.default_rng((request.digest(), self.seed))
        noise = rng.normal(0.0, self.strength, size=response.frames.shape)
        out = self._frames.get(response.frames.shape)
        np.add(response.frames, noise.astype(np.float32), out=out)
        np.clip(out, 0.0, 1.0, out=out)
        return PredictionResponse(out)


def make_degraded(
    base: OracleModel, kind: str, strength: float, seed: int = 0
) -> DegradedModel:
    return DegradedModel(base, kind, strength, seed)


class EnsembleModel:
    """Bundle of member models queried jointly; one member is drawn per
    planning step to score candidates while the spread across members feeds
    the disagreement penalty."""

    kind = "ensemble"

    def __init__(self, members: list, name: str = "ensemble"):
        if len(members) < 2:
            raise ConfigurationError("an ensemble needs at least 2 members")
        self.members = list(members)
        self.name = name

    @property
    def requires_state(self) -> bool:
        return any(getattr(m, "requires_state", False) for m in self.members)

    def predict_all(
        self, request: PredictionRequest, token: HiddenStateToken | None = None
    ) -> list[PredictionResponse]:
        return [m.predict(request, token) for m in self.members]

    def predict(
        self, request: PredictionRequest, token: HiddenStateToken | None = None
    ) -> PredictionResponse:
        # Without a planner-provided draw, score with member 0 (deterministic).
        return self.members[0].predict(request, token)


def ensemble_predict(
    members: list,
    request: PredictionRequest,
    token: HiddenStateToken | None,
    rng: np.random.Generator,
) -> tuple[PredictionResponse, list[PredictionResponse], int]:
    """Query every member on the same request; draw the scoring member
    uniformly from the provided (planner-owned) stream."""
    if len(members) < 2:
        raise ConfigurationError("ensemble_predict needs at least 2 members")
    responses = [m.predict(request, token) for m in members]
    shape = responses[0].frames.shape
    for r in responses[1:]:
        if r.frames.shape != shape:
            raise InvalidInputError("ensemble member responses disagree in shape")
    scoring_index = int(rng.integers(0, len(members)))
    return responses[scoring_index], responses, scoring_index


def disagreement(responses: list[PredictionResponse]) -> np.ndarray:
    """Per-candidate spread: the largest mean absolute deviation of any
    member from the ensemble-mean prediction (averaged over every element
    of the candidate's rollout)."""
    if len(responses) < 2:
        raise InvalidInputError("disagreement needs at least 2 responses")
    shape = responses[0].frames.shape
    for r in responses[1:]:
        if r.frames.shape != shape:
            raise InvalidInputError("response shapes do not match")
    batch = shape[0]
    deltas = np.empty(batch, dtype=np.float64)
    chunk = max(1, min(batch, 2 ** 24 // max(1, int(np.prod(shape[1:])))))
    for start in range(0, batch, chunk):
        stop = min(batch, start + chunk)
        stack = np.stack([r.frames[start:stop] for r in responses]).astype(np.float64)
        mean = stack.mean(axis=0)
        dev = np.abs(stack - mean[None]).mean(axis=tuple(range(2, stack.ndim)))
        deltas[start:stop] = dev.max(axis=0)
    return deltas


def predict(model, request: PredictionRequest, token: HiddenStateToken | None = None):
    """Uniform entry point across model kinds."""
    return model.predict(request, token)
