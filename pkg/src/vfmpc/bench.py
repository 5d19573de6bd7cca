"""Benchmark orchestration: config files, model construction, seeding
policy, the episode loop over task instances, and run manifests.

Every stochastic role derives its own stream from the master seed (see
seeding.derive_seed): the planner's sampling stream and the ensemble
scoring stream are independent per episode, so ensembled and plain runs
consume identical sampling noise, and episodes can run in any order.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError
from . import world as w
from .costs import CostSpec
from .metrics import (
    ControlReport,
    StudyReport,
    aggregate_control,
    build_study_report,
    evaluate_prediction_metrics,
)
from .models import EnsembleModel, OracleModel, make_degraded
from .planning import MPCConfig, PlannerConfig, run_episode
from .seeding import derive_seed, rng_for
from .tasks import TaskInstance


# ---------------------------------------------------------------------------
# Config files: flat "section.key = value" lines, or an equivalent JSON
# document with nested sections.


def parse_config_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    sections: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigurationError(
                f"config line {lineno}: keys need a section prefix (got {key!r})"
            )
        section, name = key.split(".", 1)
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = value
        sections.setdefault(section, {})[name] = parsed
    return sections


def load_config_file(path: Path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Model specs: "oracle", "blur:2.0", "noise:0.1", "action_blind", "lagged"


def parse_model_spec(spec: str) -> tuple[str, float]:
    name, _, arg = spec.strip().partition(":")
    name = name.strip()
    if name == "oracle":
        if arg:
            raise ConfigurationError("oracle takes no argument")
        return "oracle", 0.0
    if name in ("blur", "noise"):
        if not arg:
            raise ConfigurationError(f"{name} needs a strength, e.g. '{name}:1.0'")
        try:
            strength = float(arg)
        except ValueError:
            raise ConfigurationError(f"bad strength {arg!r} in model spec {spec!r}")
        if strength < 0:
            raise ConfigurationError("model strength must be non-negative")
        return name, strength
    if name in ("action_blind", "lagged"):
        if arg:
            raise ConfigurationError(f"{name} takes no argument")
        return name, 0.0
    raise ConfigurationError(f"unknown model spec {spec!r}")


def parse_zoo_spec(zoo: str) -> list[tuple[str, float]]:
    specs = [s for s in (part.strip() for part in zoo.split(",")) if s]
    if not specs:
        raise ConfigurationError("empty model zoo spec")
    return [parse_model_spec(s) for s in specs]


def build_model(
    spec: str, config: w.WorldConfig, master_seed: int, member_index: int = 0
):
    kind, strength = parse_model_spec(spec)
    oracle = OracleModel(config)
    if kind == "oracle":
        return oracle
    degradation = "pixel_noise" if kind == "noise" else kind
    seed = derive_seed(master_seed, f"model:{spec}:{member_index}")
    model = make_degraded(oracle, degradation, strength, seed=seed)
    if member_index:
        model.name = f"{model.name}#{member_index}"
    return model


def build_ensemble(spec: str, config: w.WorldConfig, master_seed: int, n_members: int):
    members = [build_model(spec, config, master_seed, i) for i in range(n_members)]
    return EnsembleModel(members, name=f"ensemble{n_members}({spec})")


# ---------------------------------------------------------------------------
# Benchmark runs


@dataclass
class BenchResult:
    episodes: list
    report: ControlReport
    manifest: dict


def run_benchmark(
    config: w.WorldConfig,
    model,
    tasks: list[TaskInstance],
    planner_config: PlannerConfig,
    mpc_config: MPCConfig,
    cost_spec: CostSpec,
    master_seed: int,
    model_label: str | None = None,
) -> BenchResult:
    """Run one episode per task instance with per-episode derived streams."""
    from .costs import make_planning_cost

    ensembled = hasattr(model, "predict_all")
    episodes = []
    started = time.perf_counter()
    for task in tasks:
        cost_fn = make_planning_cost(cost_spec, task.goal_frame)
        rng = rng_for(master_seed, f"planner:{task.id}")
        scoring_rng = (
            rng_for(master_seed, f"ensemble:{task.id}") if ensembled else None
        )
        episodes.append(
            run_episode(
                config,
                model,
                cost_fn,
                task,
                planner_config,
                mpc_config,
                rng,
                scoring_rng=scoring_rng,
                penalty_lambda=cost_spec.penalty_lambda if ensembled else 0.0,
            )
        )
    wall = time.perf_counter() - started
    name = model_label or getattr(model, "name", "model")
    report = aggregate_control(episodes, model_name=name)
    manifest = {
        "schema_version": 1,
        "engine_version": __version__,
        "model": name,
        "master_seed": master_seed,
        "n_episodes": len(episodes),
        "wall_time_s": wall,
        "config": {
            "world": config.to_dict(),
            "planner": planner_config.__dict__,
            "mpc": mpc_config.__dict__,
            "cost": {
                "kind": cost_spec.kind,
                "pixel_weight": cost_spec.pixel_weight,
                "classifier_weight": cost_spec.classifier_weight,
                "penalty_lambda": cost_spec.penalty_lambda,
            },
        },
    }
    return BenchResult(episodes, report, manifest)


def run_study(
    model_specs: list[str],
    config: w.WorldConfig,
    tasks: list[TaskInstance],
    heldout_path: Path,
    planner_config: PlannerConfig,
    mpc_config: MPCConfig,
    master_seed: int,
    n_sequences: int = 20,
) -> StudyReport:
    """Metric-vs-control comparison: evaluate each zoo model on held-out
    prediction quality and on full benchmark success, then join and flag
    rank inversions.  Control runs use the pixel cost."""
    metric_rows = []
    control_rows = []
    for spec in model_specs:
        model = build_model(spec, config, master_seed)
        metric_rows.append(
            evaluate_prediction_metrics(
                model,
                heldout_path,
                n_sequences=n_sequences,
                seed=derive_seed(master_seed, f"metrics:{model.name}"),
                world_config=config,
            )
        )
        result = run_benchmark(
            config, model, tasks, planner_config, mpc_config,
            CostSpec.pixel(), master_seed=master_seed, model_label=model.name,
        )
        control_rows.append(result.report)
    return build_study_report(metric_rows, control_rows)


def write_run_outputs(out_dir: Path, result: BenchResult) -> dict:
    """Write the run artifacts.  Everything except the manifest (which
    carries wall-clock timings) is byte-reproducible across reruns."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "control_report": out_dir / "control_report.json",
        "episodes": out_dir / "episodes.json",
        "csv": out_dir / "report.csv",
        "manifest": out_dir / "manifest.json",
    }
    result.report.save(files["control_report"])
    episodes_doc = {
        "schema_version": 1,
        "episodes": [e.to_dict() for e in result.episodes],
    }
    files["episodes"].write_text(
        json.dumps(episodes_doc, indent=2, sort_keys=True) + "\n"
    )
    result.report.save_csv(files["csv"])
    manifest = dict(result.manifest)
    manifest["files"] = {
        key: path.name for key, path in files.items() if key != "manifest"
    }
    manifest["episode_results"] = [
        {"task_id": e.task_id, "file": files["episodes"].name, "index": i}
        for i, e in enumerate(result.episodes)
    ]
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in files.items()}
