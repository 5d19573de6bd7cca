"""Command-line surface: gen-data, gen-tasks, train-classifier, run,
eval-metrics, study.

Flag precedence is command line > config file > built-in defaults.  Exit
status: 0 on success, 1 when the benchmark itself degraded (episodes
errored), 2 on configuration or transport failure.  The VP2_LOG environment
variable (error | info | debug) controls logging verbosity.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import EngineError, ConfigurationError, ProtocolError, RemoteModelError
from . import world as w
from . import bench
from .costs import CostSpec, load_classifier, save_classifier, train_success_classifier
from .dataset import collect_dataset
from .metrics import MetricReport, evaluate_prediction_metrics
from .planning import MPCConfig, PlannerConfig
from .protocol import RemoteModel
from .seeding import derive_seed
from .tasks import generate_task_instances, load_task_instances, save_task_instances

log = logging.getLogger("vfmpc")

EXIT_OK = 0
EXIT_BENCH_FAILURE = 1
EXIT_CONFIG_FAILURE = 2

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("VP2_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        level = "info"
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def _positive(kind, name):
    def convert(value):
        parsed = kind(value)
        if parsed < 0:
            raise argparse.ArgumentTypeError(f"{name} must be non-negative")
        return parsed

    return convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vfmpc",
        description="Visual-foresight MPC engine and forward-model benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect a scripted pushing dataset")
    p.add_argument("--n-traj", type=int, default=5000)
    p.add_argument("--noise-sigma", type=_positive(float, "--noise-sigma"), default=0.05)
    p.add_argument("--traj-len", type=int, default=35)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-tasks", help="generate benchmark task instances")
    p.add_argument("--n-per-category", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-classifier", help="train a success classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run the control benchmark")
    p.add_argument("--config", help="config file (flat key=value or JSON)")
    p.add_argument("--tasks", help="task-instance file")
    p.add_argument("--model-kind", help="built-in model spec, e.g. oracle or blur:2.0")
    p.add_argument("--model-cmd", help="command for a model server on stdio")
    p.add_argument("--model-addr", help="host:port of a model server")
    p.add_argument("--algorithm", choices=("mppi", "cem", "random_shooting"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--ensemble", type=int, default=0, metavar="N")
    p.add_argument("--lambda", dest="penalty_lambda", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-metrics", help="prediction metrics on held-out data")
    p.add_argument("--zoo", default="oracle", help="comma list of model specs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-sequences", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("study", help="metric-vs-control comparison study")
    p.add_argument("--zoo", required=True, help="comma list of model specs")
    p.add_argument("--tasks", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-sequences", type=int, default=20)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--algorithm", choices=("mppi", "cem", "random_shooting"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _merged_value(args_value, file_config: dict, section: str, key: str, default):
    """Command-line flag > config-file entry > built-in default."""
    if args_value is not None:
        return args_value
    return file_config.get(section, {}).get(key, default)


def _planner_config(args, file_config: dict) -> PlannerConfig:
    defaults = PlannerConfig()
    return PlannerConfig(
        n_samples=int(_merged_value(getattr(args, "n_samples", None), file_config, "planner", "n_samples", defaults.n_samples)),
        temperature=float(_merged_value(getattr(args, "gamma", None), file_config, "planner", "temperature", defaults.temperature)),
        noise_beta=float(_merged_value(None, file_config, "planner", "noise_beta", defaults.noise_beta)),
        sample_stdev=float(_merged_value(None, file_config, "planner", "sample_stdev", defaults.sample_stdev)),
        plan_horizon=int(_merged_value(None, file_config, "planner", "plan_horizon", defaults.plan_horizon)),
        context_len=int(_merged_value(None, file_config, "planner", "context_len", defaults.context_len)),
        algorithm=str(_merged_value(getattr(args, "algorithm", None), file_config, "planner", "algorithm", defaults.algorithm)),
        mppi_rounds=int(_merged_value(None, file_config, "planner", "mppi_rounds", defaults.mppi_rounds)),
        mppi_round_decay=float(_merged_value(None, file_config, "planner", "mppi_round_decay", defaults.mppi_round_decay)),
        cem_elite_frac=float(_merged_value(None, file_config, "planner", "cem_elite_frac", defaults.cem_elite_frac)),
        cem_iterations=int(_merged_value(None, file_config, "planner", "cem_iterations", defaults.cem_iterations)),
        seed=int(_merged_value(getattr(args, "seed", None), file_config, "planner", "seed", defaults.seed)),
        action_bound=float(_merged_value(None, file_config, "planner", "action_bound", defaults.action_bound)),
    )


def _mpc_config(file_config: dict) -> MPCConfig:
    defaults = MPCConfig()
    return MPCConfig(
        episode_len=int(_merged_value(None, file_config, "mpc", "episode_len", defaults.episode_len)),
    )


def _cost_spec(file_config: dict) -> CostSpec:
    section = file_config.get("cost", {})
    kind = section.get("kind", "pixel_mse")
    if kind == "pixel_mse":
        return CostSpec.pixel(
            pixel_weight=float(section.get("pixel_weight", 1.0)),
            penalty_lambda=float(section.get("penalty_lambda", 0.01)),
        )
    if kind == "classifier_combo":
        path = section.get("classifier")
        if not path:
            raise ConfigurationError("classifier_combo cost needs cost.classifier = <path>")
        return CostSpec.combo(
            load_classifier(Path(path)),
            pixel_weight=float(section.get("pixel_weight", 0.5)),
            classifier_weight=float(section.get("classifier_weight", 10.0)),
            penalty_lambda=float(section.get("penalty_lambda", 0.01)),
        )
    raise ConfigurationError(f"unknown cost kind {kind!r}")


def _cmd_gen_data(args) -> int:
    if args.n_traj < 0:
        raise ConfigurationError("--n-traj must be non-negative")
    if args.traj_len < 2:
        raise ConfigurationError("--traj-len must be at least 2")
    config = w.WorldConfig()
    header = collect_dataset(
        config,
        n_traj=args.n_traj,
        out_path=Path(args.out),
        noise_sigma=args.noise_sigma,
        traj_len=args.traj_len,
        seed=args.seed,
    )
    print(
        f"wrote {header.n_episodes} trajectories of {header.traj_len} steps "
        f"({header.height}x{header.width}) to {args.out}"
    )
    return EXIT_OK


def _cmd_gen_tasks(args) -> int:
    config = w.WorldConfig()
    instances = generate_task_instances(
        config, n_per_category=args.n_per_category, seed=args.seed
    )
    save_task_instances(Path(args.out), config, instances)
    print(f"wrote {len(instances)} task instances to {args.out}")
    return EXIT_OK


def _cmd_train_classifier(args) -> int:
    model = train_success_classifier(
        Path(args.dataset),
        args.category,
        steps=args.steps,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    save_classifier(Path(args.out), model)
    print(
        f"trained {args.category} classifier for {args.steps} steps "
        f"(final loss {model.metadata['final_loss']:.4f}) -> {args.out}"
    )
    return EXIT_OK


def _build_run_model(args, file_config, config, master_seed, planner_config):
    shape = {
        "context_len": planner_config.context_len,
        "horizon": planner_config.plan_horizon,
        "height": config.render_resolution,
        "width": config.render_resolution,
        "channels": 3,
        "action_dim": planner_config.action_dim,
    }
    model_cmd = args.model_cmd or file_config.get("model", {}).get("cmd")
    model_addr = args.model_addr or file_config.get("model", {}).get("addr")
    model_kind = args.model_kind or file_config.get("model", {}).get("kind")
    if model_cmd:
        return RemoteModel.from_command(model_cmd, **shape)
    if model_addr:
        host, _, port = model_addr.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigurationError(f"--model-addr must be host:port, got {model_addr!r}")
        return RemoteModel.from_address(host, int(port), **shape)
    if not model_kind:
        raise ConfigurationError("one of --model-kind/--model-cmd/--model-addr is required")
    if args.ensemble:
        if args.ensemble < 2:
            raise ConfigurationError("--ensemble needs at least 2 members")
        return bench.build_ensemble(model_kind, config, master_seed, args.ensemble)
    return bench.build_model(model_kind, config, master_seed)


def _cmd_run(args) -> int:
    file_config = bench.load_config_file(Path(args.config)) if args.config else {}
    master_seed = int(_merged_value(args.seed, file_config, "bench", "master_seed", 0))
    planner_config = _planner_config(args, file_config)
    if args.penalty_lambda is not None:
        file_config.setdefault("cost", {})["penalty_lambda"] = args.penalty_lambda
    cost_spec = _cost_spec(file_config)
    mpc_config = _mpc_config(file_config)

    tasks_path = args.tasks or file_config.get("bench", {}).get("tasks")
    if not tasks_path:
        raise ConfigurationError("--tasks (or bench.tasks in the config) is required")
    config, tasks = load_task_instances(Path(tasks_path))

    model = _build_run_model(args, file_config, config, master_seed, planner_config)
    try:
        result = bench.run_benchmark(
            config, model, tasks, planner_config, mpc_config, cost_spec, master_seed
        )
    finally:
        if hasattr(model, "close"):
            model.close()
    bench.write_run_outputs(Path(args.out), result)
    errored = sum(1 for e in result.episodes if e.diagnostics.error)
    print(
        f"{result.report.model_name}: success {result.report.overall_rate:.2%} "
        f"over {result.report.n_episodes} episodes ({errored} errored) -> {args.out}"
    )
    return EXIT_BENCH_FAILURE if errored else EXIT_OK


def _cmd_eval_metrics(args) -> int:
    config = w.WorldConfig()
    specs = bench.parse_zoo_spec(args.zoo)
    models = {}
    for kind, strength in specs:
        spec = kind if kind in ("oracle", "action_blind", "lagged") else f"{kind}:{strength:g}"
        model = bench.build_model(spec, config, args.seed)
        models[model.name] = model
    report = MetricReport(
        models={
            name: evaluate_prediction_metrics(
                model,
                Path(args.dataset),
                n_sequences=args.n_sequences,
                seed=derive_seed(args.seed, f"metrics:{name}"),
                world_config=config,
            )
            for name, model in models.items()
        }
    )
    report.save(Path(args.out))
    for name, row in report.models.items():
        print(f"{name}: mse {row.mse:.6f}  psnr {row.psnr_db:.2f} dB  ssim {row.ssim:.4f}")
    return EXIT_OK


def _cmd_study(args) -> int:
    specs = bench.parse_zoo_spec(args.zoo)
    spec_strings = [
        kind if kind in ("oracle", "action_blind", "lagged") else f"{kind}:{strength:g}"
        for kind, strength in specs
    ]
    config, tasks = load_task_instances(Path(args.tasks))
    report = bench.run_study(
        spec_strings,
        config,
        tasks,
        Path(args.dataset),
        _planner_config(args, {}),
        MPCConfig(),
        master_seed=args.seed,
        n_sequences=args.n_sequences,
    )
    out = Path(args.out)
    report.save(out)
    report.save_csv(out.with_suffix(".csv"))
    for row in report.rows:
        print(
            f"{row['model_name']}: ssim {row['ssim']:.4f}  mse {row['mse']:.6f}  "
            f"success {row['success_rate']:.2%}"
        )
    if report.flagged_metrics:
        print(f"rank inversions flagged for: {', '.join(report.flagged_metrics)}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "gen-tasks": _cmd_gen_tasks,
    "train-classifier": _cmd_train_classifier,
    "run": _cmd_run,
    "eval-metrics": _cmd_eval_metrics,
    "study": _cmd_study,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, RemoteModelError, ProtocolError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG_FAILURE
    except EngineError as exc:
        log.error("%s", exc)
        return EXIT_BENCH_FAILURE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG_FAILURE


if __name__ == "__main__":
    sys.exit(main())
