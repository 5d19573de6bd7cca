"""Sampling-based trajectory optimization and the receding-horizon MPC loop.

Planning scores live in image-sum units (see costs.make_planning_cost), the
scale the default weighting temperature was tuned against.  The planner owns
two independent seeded streams: one for action-noise sampling and one for
ensemble scoring-member draws, so ensembled and single-model runs consume
identical sampling noise.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, EngineError, PlannerError
from . import world as w
from .models import HiddenStateToken, PredictionRequest, ensemble_predict, disagreement
from .tasks import TaskInstance, success

ALGORITHMS = ("mppi", "cem", "random_shooting")


@dataclass(frozen=True)
class PlannerConfig:
    n_samples: int = 200
    temperature: float = 0.05  # weight scaling factor gamma
    noise_beta: float = 0.5  # sampling-noise correlation coefficient
    sample_stdev: float = 0.04  # per-action-dimension stdev, world units
    plan_horizon: int = 10
    context_len: int = 2
    algorithm: str = "mppi"
    mppi_rounds: int = 2
    mppi_round_decay: float = 0.5
    retain_mean: bool = True
    cem_elite_frac: float = 0.1
    cem_iterations: int = 3
    seed: int = 0
    action_bound: float = 0.08  # |delta| limit per axis (world max_action_step)
    action_dim: int = 2

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be at least 2")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if not 0.0 <= self.noise_beta <= 1.0:
            raise ConfigurationError("noise_beta must lie in [0,1]")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.mppi_rounds < 1:
            raise ConfigurationError("mppi_rounds must be at least 1")
        if self.algorithm == "cem" and self.cem_elite_frac * self.n_samples < 1:
            raise ConfigurationError("cem_elite_frac * n_samples must be >= 1")


@dataclass(frozen=True)
class MPCConfig:
    episode_len: int = 15
    replan_every: int = 1  # fixed; replanning happens at every step

    def __post_init__(self):
        if self.episode_len < 1:
            raise ConfigurationError("episode_len must be at least 1")
        if self.replan_every != 1:
            raise ConfigurationError("replan_every is fixed to 1")


def sample_action_sequences(
    mean: np.ndarray, config: PlannerConfig, rng: np.random.Generator
) -> np.ndarray:
    """Candidate sequences around ``mean`` with temporally filtered noise:
    n_t = beta * u_t + (1 - beta) * n_{t-1}, n_{-1} = 0, then clipped to the
    action bounds.  Returns [n_samples, T, A] float32."""
    mean = np.asarray(mean, dtype=np.float64)
    if not np.all(np.isfinite(mean)):
        raise PlannerError("sampling mean must be finite")
    horizon, action_dim = mean.shape
    u = rng.normal(
        0.0, config.sample_stdev, size=(config.n_samples, horizon, action_dim)
    )
    noise = np.empty_like(u)
    prev = np.zeros((config.n_samples, action_dim))
    beta = config.noise_beta
    for t in range(horizon):
        prev = beta * u[:, t, :] + (1.0 - beta) * prev
        noise[:, t, :] = prev
    if config.retain_mean:
        # Candidate 0 carries the committed plan unperturbed, so one round
        # of reweighting can never score worse than sticking to it.
        noise[0] = 0.0
    candidates = np.clip(
        mean[None, :, :] + noise, -config.action_bound, config.action_bound
    )
    return candidates.astype(np.float32)


def mppi_weights(scores: np.ndarray, gamma: float) -> np.ndarray:
    """Exponential score weighting w_i proportional to exp(gamma * (s_i - max s)),
    normalized to sum to one.  -inf scores get zero weight."""
    scores = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise PlannerError("no candidate received a finite score")
    top = scores[finite].max()
    shifted = np.where(finite, scores - top, -np.inf)
    weights = np.exp(gamma * shifted, where=np.isfinite(shifted), out=np.zeros_like(scores))
    return weights / weights.sum()


@dataclass
class StepInfo:
    """Per-planning-step scoring summary for diagnostics."""

    best_score: float = np.nan
    mean_score: float = np.nan
    score_std: float = np.nan
    delta_mean: float = np.nan
    delta_std: float = np.nan
    delta_selected: float = np.nan
    delta_violation: bool = False
    scoring_index: int | None = None


def optimize_step(
    evaluate,
    mean: np.ndarray,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, StepInfo]:
    """One planning round of the configured algorithm.

    ``evaluate`` maps candidates [N,T,A] float32 to (scores [N] float64,
    StepInfo-or-None); non-finite scores are treated as -inf (a candidate
    whose cost blew up never wins).  Returns (best_sequence, new_mean, info),
    both [T,A] float32.
    """
    mean64 = np.asarray(mean, dtype=np.float64)

    def _scored(candidates):
        scores, info = evaluate(candidates)
        scores = np.asarray(scores, dtype=np.float64)
        scores = np.where(np.isfinite(scores), scores, -np.inf)
        if not np.any(np.isfinite(scores)):
            raise PlannerError("every candidate scored non-finite")
        return scores, info

    if config.algorithm == "mppi":
        # Refinement rounds within one control step: the reweighted mean of
        # one round seeds the sampling of the next, at a narrowing noise
        # scale.  A single round leaves the executed first action too
        # diluted to hold a contact line.
        mean_i = mean64
        info = None
        round_config = config
        for r in range(config.mppi_rounds):
            if r > 0 and config.mppi_round_decay != 1.0:
                round_config = replace(
                    round_config,
                    sample_stdev=round_config.sample_stdev * config.mppi_round_decay,
                )
            candidates = sample_action_sequences(mean_i, round_config, rng)
            scores, info = _scored(candidates)
            weights = mppi_weights(scores, config.temperature)
            mean_i = np.einsum("n,nta->ta", weights, candidates.astype(np.float64))
            info = _fill_scores(info, scores)
        new_mean = mean_i.astype(np.float32)
        return new_mean.copy(), new_mean, info

    if config.algorithm == "random_shooting":
        candidates = sample_action_sequences(mean64, config, rng)
        scores, info = _scored(candidates)
        best = candidates[int(np.argmax(scores))].copy()
        info = _fill_scores(info, scores)
        return best, mean64.astype(np.float32), info

    # cem: iteratively refit mean/stdev to the elite fraction
    n_elite = max(1, int(config.cem_elite_frac * config.n_samples))
    mean_i = mean64.copy()
    stdev_i = np.full_like(mean_i, config.sample_stdev)
    info = None
    for _ in range(config.cem_iterations):
        noise = rng.standard_normal((config.n_samples,) + mean_i.shape)
        candidates = np.clip(
            mean_i[None] + stdev_i[None] * noise,
            -config.action_bound,
            config.action_bound,
        ).astype(np.float32)
        scores, info = _scored(candidates)
        order = np.argsort(scores, kind="stable")
        elite = candidates[order[-n_elite:]].astype(np.float64)
        mean_i = elite.mean(axis=0)
        stdev_i = elite.std(axis=0)
        info = _fill_scores(info, scores)
    best = mean_i.astype(np.float32)
    return best.copy(), best, info


def _fill_scores(info: StepInfo | None, scores: np.ndarray) -> StepInfo:
    if info is None:
        info = StepInfo()
    finite = scores[np.isfinite(scores)]
    info.best_score = float(finite.max())
    info.mean_score = float(finite.mean())
    info.score_std = float(finite.std())
    return info


def plan_step(
    model,
    cost_fn,
    context_frames: np.ndarray,
    context_actions: np.ndarray,
    token: HiddenStateToken | None,
    mean: np.ndarray,
    config: PlannerConfig,
    rng: np.random.Generator,
    scoring_rng: np.random.Generator | None = None,
    penalty_lambda: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, StepInfo]:
    """One visual-foresight planning step: sample candidates, batch-predict,
    score against the goal (optionally penalizing ensemble disagreement),
    and update the sampling mean."""
    context_frames = np.asarray(context_frames, dtype=np.float32)
    context_actions = np.asarray(context_actions, dtype=np.float32)
    ensembled = hasattr(model, "predict_all")
    if ensembled and scoring_rng is None:
        raise ConfigurationError("ensemble planning requires a scoring stream")
    scoring_cell: list[int] = []

    def evaluate(candidates: np.ndarray):
        n = candidates.shape[0]
        prefix = np.broadcast_to(
            context_actions[None, :, :], (n,) + context_actions.shape
        )
        full = np.concatenate([prefix, candidates], axis=1)
        request = PredictionRequest(context_frames, full, config.plan_horizon)
        info = StepInfo()
        if ensembled:
            responses = model.predict_all(request, token)
            if not scoring_cell:
                scoring_cell.append(int(scoring_rng.integers(0, len(responses))))
            idx = scoring_cell[0]
            scoring = responses[idx]
            deltas = disagreement(responses)
            costs = np.asarray(cost_fn(scoring.frames), dtype=np.float64)
            # Penalty shares the image-sum units of the planning cost.
            delta_scale = float(np.prod(scoring.frames.shape[1:]))
            scores = -costs - penalty_lambda * deltas * delta_scale
            info.scoring_index = idx
            info.delta_mean = float(deltas.mean())
            info.delta_std = float(deltas.std())
            selected = int(np.argmax(np.where(np.isfinite(scores), scores, -np.inf)))
            info.delta_selected = float(deltas[selected])
            if deltas[selected] > info.delta_mean + 3.0 * info.delta_std:
                tol = 0.005 * abs(costs[selected])
                cheaper = (costs <= costs[selected] + tol) & (deltas < deltas[selected])
                info.delta_violation = bool(np.any(cheaper))
        else:
            response = model.predict(request, token)
            costs = np.asarray(cost_fn(response.frames), dtype=np.float64)
            scores = -costs
        return scores, info

    return optimize_step(evaluate, mean, config, rng)


@dataclass
class PlanDiagnostics:
    """Per-step planning summaries; arrays are sized to the episode length
    and NaN-padded if the episode aborted early."""

    best_score: np.ndarray
    mean_score: np.ndarray
    score_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray
    delta_selected: np.ndarray
    delta_violations: list[bool]
    wall_time: np.ndarray
    error: str | None = None

    @classmethod
    def empty(cls, episode_len: int) -> "PlanDiagnostics":
        nan = lambda: np.full(episode_len, np.nan)
        return cls(nan(), nan(), nan(), nan(), nan(), nan(), [], nan())

    def to_dict(self) -> dict:
        # wall_time intentionally omitted: serialized results stay
        # byte-identical across reruns.
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "best_score": arr(self.best_score),
            "mean_score": arr(self.mean_score),
            "score_std": arr(self.score_std),
            "delta_mean": arr(self.delta_mean),
            "delta_std": arr(self.delta_std),
            "delta_selected": arr(self.delta_selected),
            "delta_violations": list(self.delta_violations),
            "error": self.error,
        }


@dataclass
class EpisodeResult:
    task_id: str
    category: str
    actions: list
    frames: list
    states: list
    success: bool
    diagnostics: PlanDiagnostics

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "category": self.category,
            "actions": [[float(v) for v in a] for a in self.actions],
            "states": [s.to_dict() for s in self.states],
            "success": self.success,
            "diagnostics": self.diagnostics.to_dict(),
        }


def run_episode(
    config: w.WorldConfig,
    model,
    cost_fn,
    task: TaskInstance,
    planner_config: PlannerConfig,
    mpc_config: MPCConfig,
    rng: np.random.Generator,
    scoring_rng: np.random.Generator | None = None,
    penalty_lambda: float = 0.0,
) -> EpisodeResult:
    """Receding-horizon control: replan at every step, execute the first
    action, warm-start the next step by time-shifting the solution."""
    t_c = planner_config.context_len
    horizon = planner_config.plan_horizon
    a_dim = planner_config.action_dim

    state = task.init_state.copy()
    frame = w.render(state, config)
    context = [frame.copy() for _ in range(t_c)]
    context_actions = np.zeros((t_c - 1, a_dim), dtype=np.float32)
    mean = np.zeros((horizon, a_dim), dtype=np.float32)

    states = [state.copy()]
    frames = [frame]
    actions: list[np.ndarray] = []
    diag = PlanDiagnostics.empty(mpc_config.episode_len)
    requires_state = getattr(model, "requires_state", False)

    for t in range(mpc_config.episode_len):
        token = HiddenStateToken(state.copy()) if requires_state else None
        started = time.perf_counter()
        try:
            best, new_mean, info = plan_step(
                model,
                cost_fn,
                np.stack(context),
                context_actions,
                token,
                mean,
                planner_config,
                rng,
                scoring_rng=scoring_rng,
                penalty_lambda=penalty_lambda,
            )
        except EngineError as exc:
            diag.error = f"step {t}: {exc}"
            return EpisodeResult(
                task.id, task.category, actions, frames, states, False, diag
            )
        diag.wall_time[t] = time.perf_counter() - started
        diag.best_score[t] = info.best_score
        diag.mean_score[t] = info.mean_score
        diag.score_std[t] = info.score_std
        diag.delta_mean[t] = info.delta_mean
        diag.delta_std[t] = info.delta_std
        diag.delta_selected[t] = info.delta_selected
        diag.delta_violations.append(info.delta_violation)

        action = best[0].astype(np.float32)
        state = w.step(state, action.astype(np.float64), config)
        frame = w.render(state, config)
        actions.append(action)
        states.append(state.copy())
        frames.append(frame)
        context = (context + [frame.copy()])[-t_c:]
        if t_c > 1:
            context_actions = np.concatenate(
                [context_actions[1:], action[None, :]], axis=0
            )
        mean = np.concatenate(
            [new_mean[1:], np.zeros((1, a_dim), dtype=np.float32)], axis=0
        )

    return EpisodeResult(
        task.id,
        task.category,
        actions,
        frames,
        states,
        success(state, task, config),
        diag,
    )
