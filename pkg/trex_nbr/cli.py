"""
Command-line entry point.

    trex-nbr prepare --config configs/dunnhumby.yaml
    trex-nbr run --config configs/dunnhumby.yaml
    trex-nbr eval --predictions out/run/predictions_p_topfreq.jsonl --corpus out/corpus --k 10

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data errors.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from . import __version__
from .baselines import TREX_METHODS
from .charts import create_ablation_chart, write_figure
from .config import RunConfig, load_config
from .corpus import (corpus_hash, ingest, load_split, preprocess, sample_dataset_users, save_canonical,
                     save_split, split, synth_generate, write_stats)
from .experiments import (ACCURACY_METRICS, Comparison, MethodRun, RunManifest, ablation_rep, compare_methods,
                          default_v_grid, paired_ttest, resolve_params, run_method, sample_ratio_sweep,
                          significance_frame, sweep_threshold, write_frontiers, write_report)
from .metrics import Cascade, EvaluationSettings, LogDiscount, evaluate, group_assignment
from .trex import TrexRecommender, read_recommendations, write_recommendations
from .utils import ConfigError, CorpusError, IngestionError, TrexError, setup_logging, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
CONFIG_COMMANDS = ("prepare", "tune", "run", "sweep", "ablate")


class UsageError(TrexError):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises instead of exiting, so dispatch owns the exit code."""

    def error(self, message):
        raise UsageError(message, self.format_usage())


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="trex-nbr", description="Next-basket recommendation experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Logging level (default: from config, else INFO)")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    p = sub.add_parser("prepare", help="Ingest, preprocess and split a corpus")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("stats", help="Print corpus statistics as JSON")
    p.add_argument("--corpus", required=True, help="Prepared corpus directory")
    p.add_argument("--output", default=None, help="Directory for stats.json (default: <corpus>/stats)")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("tune", help="Grid-search configured methods on validation users")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, help="Only tune this method")
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("run", help="Run, evaluate and compare configured methods on test users")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, help="Only run this method")
    p.add_argument("--v", type=float, default=None, help="Repetition threshold for TREx methods")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("eval", help="Evaluate a recommendation JSON-lines file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--users", choices=("test", "validation"), default="test")
    p.add_argument("--fairness-model", choices=("log", "cascade"), default="log")
    p.add_argument("--top-share", type=float, default=0.2)
    p.add_argument("--output", default=None, help="Report directory (default: next to the predictions)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="Sweep the repetition threshold v for one exploration policy")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", choices=("fairness", "diversity"), default=None,
                   help="Exploration policy (required unless --config is a sweep manifest)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablate", help="Repetition-module ablation and training-sample-ratio sweep")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("compare", help="Paired t-tests between two per-user metric CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", action="append", default=None, help="Metric column; repeatable (default: accuracy)")
    p.add_argument("--output", default=None, help="Directory for significance.csv (default: next to --a)")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("synth", help="Generate a synthetic corpus in canonical format")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories", type=int, default=12)
    p.add_argument("--baskets", type=int, default=8, help="Baskets per user")
    p.add_argument("--basket-size", type=int, default=6)
    p.add_argument("--repeat-prob", type=float, default=0.5)
    p.add_argument("--skew", type=float, default=1.0, help="Zipf exponent of item popularity")
    p.add_argument("--output", default="synthetic", help="Output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("replay", help="Re-run the command recorded in a manifest.json")
    p.add_argument("--manifest", required=True)
    p.set_defaults(handler=cmd_replay)
    return parser


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _load(args) -> RunConfig:
    config = load_config(args.config)
    _fill_from_manifest(args)
    if args.log_level is None:
        setup_logging(config.log_level)
    return config


def _options(args) -> dict:
    """Command-line arguments recorded in the manifest; the config is recorded in full elsewhere."""
    return {key: value for key, value in sorted(vars(args).items())
            if key not in ("command", "config", "handler", "log_level", "manifest")}


def _fill_from_manifest(args):
    """A manifest passed as --config supplies the options its command was run with."""
    path = Path(args.config)
    if path.suffix != ".json":
        return
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or data.get("command") != args.command:
        return
    for key, value in (data.get("options") or {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _command_dir(config: RunConfig, name: str) -> Path:
    return Path(config.output_dir) / name


def _manifest(command: str, config: RunConfig, split_data) -> RunManifest:
    return RunManifest(command, config.to_dict(), corpus_hash(split_data),
                       seeds={"dataset": config.dataset.seed, "experiment": config.experiment.seed})


def _finish(manifest: RunManifest, directory: Path) -> int:
    manifest.record_outputs(directory)
    manifest.write(directory)
    logger.info(f"Wrote manifest to {directory / 'manifest.json'}")
    return EXIT_OK


def _selected_methods(config: RunConfig, name):
    if name is None:
        return config.methods
    return (config.method_named(name),)


def _with_method(config: RunConfig, name) -> RunConfig:
    """Resolved config restricted to one method, so a replay runs the same set."""
    return replace(config, methods=_selected_methods(config, name))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    config = _load(args)
    ds = config.dataset
    if ds.format != "synthetic" and ds.path is None:
        raise ConfigError("dataset.path is required to prepare a raw corpus")
    manifest = RunManifest("prepare", config.to_dict(), seeds={"dataset": ds.seed})
    with manifest.stage("ingest"):
        if ds.format == "synthetic":
            s = ds.synthetic
            dataset = synth_generate(s.n_users, s.n_items, s.n_categories, s.baskets_per_user, s.basket_size,
                                     s.repeat_prob, s.popularity_skew, ds.seed)
        else:
            dataset = ingest(ds.format, ds.path, ds.columns or None)
        if ds.sample_users is not None and ds.sample_users < dataset.n_users:
            dataset = sample_dataset_users(dataset, ds.sample_users, ds.seed)
    with manifest.stage("preprocess"):
        processed = preprocess(dataset, ds.min_baskets, ds.min_item_count, ds.basket_cap)
        split_data = split(processed, ds.seed)
    directory = config.corpus_dir
    with manifest.stage("write"):
        save_split(split_data, directory)
        stats = write_stats(split_data, directory)
    manifest.corpus_hash = corpus_hash(split_data)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return _finish(manifest, directory)


def cmd_stats(args) -> int:
    split_data = load_split(args.corpus)
    directory = Path(args.output) if args.output else Path(args.corpus) / "stats"
    manifest = RunManifest("stats", {}, corpus_hash(split_data), options=_options(args))
    with manifest.stage("stats"):
        stats = write_stats(split_data, directory)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return _finish(manifest, directory)


def cmd_tune(args) -> int:
    config = _load(args)
    config = _with_method(config, args.method)
    split_data = load_split(config.corpus_dir)
    directory = _command_dir(config, "tune")
    manifest = _manifest("tune", config, split_data)
    manifest.options = _options(args)
    groups = group_assignment(split_data.train, config.evaluation.top_share)
    best = {}
    for method in config.methods:
        if not method.grid:
            logger.warning(f"no grid configured for {method.name}; nothing to tune")
            continue
        with manifest.stage(f"tune_{method.name}"):
            best[method.name] = resolve_params(method, split_data, config.evaluation.k, config.experiment.seed,
                                               groups, config.evaluation.selection_metric, directory)
    write_json(directory / "best_params.json", best)
    return _finish(manifest, directory)


def cmd_run(args) -> int:
    config = _load(args)
    config = _with_method(config, args.method)
    if args.v is not None:
        # resolved config carries the override
        config = replace(config, methods=tuple(
            replace(m, params={**m.params, "v": args.v}) if m.name in TREX_METHODS else m for m in config.methods))
    split_data = load_split(config.corpus_dir)
    directory = _command_dir(config, "run")
    manifest = _manifest("run", config, split_data)
    manifest.options = _options(args)
    settings = config.evaluation.settings()
    groups = group_assignment(split_data.train, config.evaluation.top_share)
    with manifest.stage("compare"):
        comparison = compare_methods(split_data, config.methods, settings, groups, config.experiment.seed,
                                     config.experiment.reference_method, config.evaluation.selection_metric,
                                     directory)
    with manifest.stage("write"):
        for name, method_run in comparison.runs.items():
            write_recommendations(directory / f"predictions_{name}.jsonl", method_run.recommendations)
        write_report(comparison, directory, settings.k)
    return _finish(manifest, directory)


def cmd_eval(args) -> int:
    split_data = load_split(args.corpus)
    users = split_data.test_users if args.users == "test" else split_data.validation_users
    targets = split_data.targets_for(users)
    histories = split_data.histories(users)
    predictions = Path(args.predictions)
    method = predictions.stem.removeprefix("predictions_")
    directory = Path(args.output) if args.output else predictions.parent / f"eval_{method}"
    manifest = RunManifest("eval", {}, corpus_hash(split_data), options=_options(args))
    recommendations = [rec for rec in read_recommendations(predictions, split_data.categories)
                       if rec.user_id in targets]
    groups = group_assignment(split_data.train, args.top_share)
    cascade = Cascade()
    settings = EvaluationSettings(k=args.k, fairness_model=cascade if args.fairness_model == "cascade" else LogDiscount(),
                                  expected_exposure_model=cascade)
    with manifest.stage("evaluate"):
        report = evaluate(recommendations, targets, histories, groups, split_data.categories, settings)
    comparison = Comparison({method: MethodRun(method, {}, recommendations, report)}, significance_frame([]))
    write_report(comparison, directory, args.k)
    print(report.aggregate_frame(method).to_string(index=False))
    return _finish(manifest, directory)


def cmd_sweep(args) -> int:
    config = _load(args)
    if args.policy is None:
        raise ConfigError("sweep needs --policy unless the config is a sweep manifest")
    split_data = load_split(config.corpus_dir)
    directory = _command_dir(config, f"sweep_{args.policy}")
    manifest = _manifest("sweep", config, split_data)
    manifest.options = _options(args)
    k = config.evaluation.k
    settings = config.evaluation.settings()
    seed = config.experiment.seed
    groups = group_assignment(split_data.train, config.evaluation.top_share)
    sweep_name = f"trex_{args.policy}"
    trex_method = config.method_named(sweep_name)
    if not trex_method.grid and not trex_method.params:
        trex_method = config.method_named("trex_rep")

    with manifest.stage("tune"):
        params = resolve_params(trex_method, split_data, k, seed, groups, config.evaluation.selection_metric)
    recommender = TrexRecommender(alpha=params.get("alpha", 0.5), beta=params.get("beta", 0.9),
                                  rep_feature_enabled=params.get("rep_feature_enabled", True),
                                  exploration=args.policy, seed=seed, groups=groups).fit(split_data.train)
    v_values = default_v_grid(recommender.model, split_data.histories(split_data.test_users),
                              config.experiment.v_quantiles)
    with manifest.stage("sweep"):
        points = sweep_threshold(recommender.model, recommender.policy, v_values, split_data, k, settings, groups)

    with manifest.stage("baselines"):
        baseline_runs = {}
        for method in config.methods:
            if method.name in ("trex_fairness", "trex_diversity"):
                continue
            method_params = resolve_params(method, split_data, k, seed, groups, config.evaluation.selection_metric)
            baseline_runs[method.name] = run_method(method.name, method_params, split_data, settings, groups, seed)
        aggregates = pd.concat([run.report.aggregate_frame(name) for name, run in baseline_runs.items()],
                               ignore_index=True) if baseline_runs else None
    with manifest.stage("write"):
        if aggregates is not None:
            write_csv(directory / "baselines.csv", aggregates)
        write_json(directory / "sweep_params.json", {"params": dict(params), "v_values": v_values})
        write_frontiers(points, directory, k, config.experiment.frontier_metrics, aggregates, args.policy)
    return _finish(manifest, directory)


def cmd_ablate(args) -> int:
    config = _load(args)
    split_data = load_split(config.corpus_dir)
    directory = _command_dir(config, "ablate")
    manifest = _manifest("ablate", config, split_data)
    k = config.evaluation.k
    grid = config.method_named("trex_rep").grid or None
    with manifest.stage("ablation"):
        table = ablation_rep(split_data, k, grid, config.evaluation.selection_metric)
    with manifest.stage("sample_ratio"):
        ratios = sample_ratio_sweep(split_data, k, config.experiment.sample_ratios, config.experiment.seed, grid)
    write_csv(directory / "ablation.csv", table)
    write_csv(directory / "sample_ratio.csv", ratios)
    write_figure(create_ablation_chart(table, [f"{m}@{k}" for m in ACCURACY_METRICS]), directory / "ablation.html")
    print(table.to_string(index=False))
    return _finish(manifest, directory)


def _read_per_user(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(path, reason="missing file")
    frame = pd.read_csv(path, dtype={"user_id": str})
    if "user_id" not in frame:
        raise IngestionError(path, 1, "missing column user_id")
    return frame.set_index("user_id")


def cmd_compare(args) -> int:
    a, b = _read_per_user(args.a), _read_per_user(args.b)
    if set(a.index) != set(b.index):
        raise CorpusError("per-user files cover different users")
    metrics = args.metric or [c for c in a.columns if c.split("@")[0] in ACCURACY_METRICS and c in b.columns]
    if not metrics:
        raise ConfigError("no common metric columns to compare")
    name_a, name_b = Path(args.a).stem.removeprefix("per_user_"), Path(args.b).stem.removeprefix("per_user_")
    results = []
    for metric in metrics:
        if metric not in a or metric not in b:
            raise ConfigError(f"metric {metric} is missing from one of the files")
        results.append(paired_ttest(a[metric].to_dict(), b[metric].to_dict(), metric, name_a, name_b))
    frame = significance_frame(results)
    directory = Path(args.output) if args.output else Path(args.a).parent / f"compare_{name_a}_vs_{name_b}"
    write_csv(directory / "significance.csv", frame)
    print(frame.to_string(index=False))
    return _finish(RunManifest("compare", {}, options=_options(args)), directory)


def cmd_synth(args) -> int:
    dataset = synth_generate(args.users, args.items, args.categories, args.baskets, args.basket_size,
                             args.repeat_prob, args.skew, args.seed)
    directory = save_canonical(dataset, args.output)
    logger.info(f"Wrote synthetic corpus of {dataset.n_users} users and {len(dataset.items)} items to {directory}")
    return _finish(RunManifest("synth", {}, seeds={"synth": args.seed}, options=_options(args)), directory)


def cmd_replay(args) -> int:
    """
    Rebuild the command line recorded in a manifest and run it again. Commands
    driven by a config read it back from the manifest itself.
    """
    path = Path(args.manifest)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        manifest = RunManifest.read(path)
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"not a run manifest: {path} ({e})") from e
    argv = [manifest.command]
    if manifest.command in CONFIG_COMMANDS:
        argv += ["--config", str(path)]
    for key, value in manifest.options.items():
        flag = "--" + key.replace("_", "-")
        for item in value if isinstance(value, list) else [value]:
            if item is not None:
                argv += [flag, str(item)]
    if args.log_level:
        argv = ["--log-level", args.log_level, *argv]
    logger.info(f"Replaying {' '.join(argv)}")
    return dispatch(argv)


def dispatch(argv=None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e.usage}{parser.prog}: error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    if args.command is None:
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE

    try:
        setup_logging(args.log_level or "INFO")
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (IngestionError, CorpusError, FileNotFoundError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return EXIT_USAGE


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
