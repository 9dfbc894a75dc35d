"""
Experiment runners: validation grid search, the repetition-threshold sweep
behind the accuracy versus beyond-accuracy frontiers, repetition-module
ablations, paired significance tests and multi-method comparisons.
"""
import itertools
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .baselines import TREX_METHODS, build_recommender
from .charts import baseline_points, create_frontier_chart, write_figure
from .corpus import SplitDataset, subsample_training
from .metrics import (EvaluationSettings, GroupAssignment, MetricReport, evaluate, group_assignment,
                      ndcg_at_k, phr_indicator, recall_at_k)
from .trex import (REPEAT, ExplorationPolicy, Recommendation, RepetitionModel, fit_repetition,
                   generate_basket, repetition_scores, score_quantiles)
from .utils import CorpusError, file_sha256, write_csv, write_excel, write_json

logger = logging.getLogger(__name__)

ACCURACY_METRICS = ("recall", "ndcg", "phr")
DETERMINISTIC_SUFFIXES = (".csv", ".json", ".jsonl")


def _steps(start: float, stop: float, step: float) -> list:
    n = int(round((stop - start) / step))
    return [round(start + i * step, 4) for i in range(n + 1)]


DEFAULT_GRIDS = MappingProxyType({
    "trex_rep": {"alpha": _steps(0.0, 1.0, 0.1), "beta": _steps(0.7, 1.0, 0.05)},
    "tifuknn": {
        "k_neighbors": [100, 300, 500, 900, 1100, 1300],
        "m_groups": [3, 7, 11, 15, 19, 23],
        "r_b": _steps(0.1, 1.0, 0.1),
        "r_g": _steps(0.1, 1.0, 0.1),
        "alpha": _steps(0.0, 1.0, 0.1),
    },
    "upcf": {
        "recency": [1, 5, 10, 25, 100, None],
        "locality": [1, 5, 10, 50, 100, 1000],
        "asymmetry": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
})


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def instantiate(name: str, params: Optional[Mapping] = None, seed: int = 0,
                groups: Optional[GroupAssignment] = None):
    """Registry lookup that also hands TREx variants the run seed and item groups."""
    params = dict(params or {})
    if name in TREX_METHODS:
        params.setdefault("seed", seed)
        params.setdefault("groups", groups)
    return build_recommender(name, params)


def accuracy_summary(recommendations: Sequence, targets: Mapping, k: int) -> dict:
    """Mean Recall/NDCG/PHR@k over users with a non-empty target."""
    by_user = {rec.user_id: rec.items[:k] for rec in recommendations}
    rows = []
    for user in sorted(targets):
        ranked = by_user.get(user, ())
        rows.append((recall_at_k(ranked, targets[user], k), ndcg_at_k(ranked, targets[user], k),
                     phr_indicator(ranked, targets[user])))
    frame = pd.DataFrame(rows, columns=list(ACCURACY_METRICS))
    return {f"{name}@{k}": float(frame[name].mean(skipna=True)) if len(frame) else float("nan")
            for name in ACCURACY_METRICS}


def _score(value: float) -> float:
    return -math.inf if value is None or math.isnan(value) else value


# --------------------------------------------------------------------------
# Grid search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    method: str
    grid: Mapping
    selection_metric: str = "recall"
    fixed: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid:
            raise ValueError(f"grid for {self.method} is empty")
        for name, values in self.grid.items():
            if not list(values):
                raise ValueError(f"grid for {self.method}.{name} is empty")
        if self.selection_metric not in ACCURACY_METRICS:
            raise ValueError(f"selection metric must be one of {ACCURACY_METRICS}")

    @classmethod
    def default(cls, method: str, **kwargs) -> "GridSpec":
        key = "trex_rep" if method in TREX_METHODS else method
        if key not in DEFAULT_GRIDS:
            raise ValueError(f"no default grid for {method}")
        return cls(method, DEFAULT_GRIDS[key], **kwargs)

    def configurations(self) -> list:
        names = list(self.grid)
        return [dict(zip(names, values)) for values in itertools.product(*(self.grid[n] for n in names))]


@dataclass(frozen=True)
class GridResult:
    method: str
    best_params: Mapping
    best_score: float
    table: pd.DataFrame

    def write(self, directory) -> Path:
        path = Path(directory) / f"validation_{self.method}.csv"
        write_csv(path, self.table)
        return path


def _search(spec: GridSpec, train, histories: Mapping, targets: Mapping, k: int, seed: int,
            groups: Optional[GroupAssignment]) -> GridResult:
    key = f"{spec.selection_metric}@{k}"
    rows = []
    best_index, best_score = None, -math.inf
    configurations = spec.configurations()
    for index, params in enumerate(configurations):
        recommender = instantiate(spec.method, {**spec.fixed, **params}, seed, groups).fit(train)
        summary = accuracy_summary(recommender.recommend_many(histories, k), targets, k)
        rows.append({**params, **summary})
        # strict improvement keeps the earliest configuration on ties
        if best_index is None or _score(summary[key]) > best_score:
            best_index, best_score = index, _score(summary[key])
        logger.debug(f"{spec.method} grid cell {index + 1}/{len(configurations)} {params}: {key}={summary[key]:.4f}")
    table = pd.DataFrame(rows)
    best = configurations[best_index]
    table["selected"] = [index == best_index for index in range(len(rows))]
    logger.info(f"Grid search for {spec.method} over {len(configurations)} configurations: best {best} "
                f"with {key}={best_score:.4f}")
    return GridResult(spec.method, MappingProxyType({**spec.fixed, **best}), best_score, table)


def grid_search(spec: GridSpec, split_data: SplitDataset, k: int = 10, seed: int = 0,
                groups: Optional[GroupAssignment] = None, output_dir=None) -> GridResult:
    """
    Evaluate every grid configuration on the validation users and keep the
    one with the highest selection metric; ties go to the earliest
    configuration in grid order. Test targets are never read.

    Args:
        spec (GridSpec): Method, grid and selection metric
        split_data (SplitDataset): Split corpus; only validation targets are used
        k (int): Basket size
        seed (int): Run seed for seeded exploration policies
        groups (GroupAssignment): Item groups for the fairness policy
        output_dir: When given, the full validation table is written there

    Returns:
        GridResult: Best parameters and the full validation table
    """
    if not split_data.validation_users:
        raise CorpusError("grid search needs at least one validation user")
    result = _search(spec, split_data.train, split_data.histories(split_data.validation_users),
                     split_data.validation_targets(), k, seed, groups)
    if output_dir is not None:
        result.write(output_dir)
    return result


# --------------------------------------------------------------------------
# Threshold sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FrontierPoint:
    v: float
    metrics: Mapping
    repeat_slots: float
    explore_slots: float

    def to_row(self) -> dict:
        return {"v": self.v, **dict(self.metrics),
                "mean_repeat_slots": self.repeat_slots, "mean_explore_slots": self.explore_slots}


def default_v_grid(model: RepetitionModel, histories: Mapping, quantiles: Sequence) -> list:
    """
    Quantiles of the pooled repetition scores, sorted and de-duplicated, plus
    one v just above the largest score where every slot explores.
    """
    values = sorted(set(score_quantiles(model, histories, quantiles)))
    top = score_quantiles(model, histories, [1.0])[0]
    values.append(float(np.nextafter(top, np.inf)))
    return values


def sweep_threshold(model: RepetitionModel, policy: ExplorationPolicy, v_values: Sequence, split_data: SplitDataset,
                    k: int = 10, settings: Optional[EvaluationSettings] = None,
                    groups: Optional[GroupAssignment] = None) -> list:
    """
    Re-generate test baskets for each threshold v and evaluate every metric.

    Repetition scores and explore candidates are computed once per user and
    reused across the whole sweep.

    Returns:
        list[FrontierPoint]: One point per v, in input order
    """
    v_values = [float(v) for v in v_values]
    if v_values != sorted(v_values):
        raise ValueError("v values must be sorted ascending")
    settings = settings or EvaluationSettings(k=k)
    if settings.k != k:
        settings = replace(settings, k=k)
    groups = groups or policy.groups or group_assignment(split_data.train)
    histories = split_data.histories(split_data.test_users)
    targets = split_data.test_targets()
    states = {}
    for user, history in histories.items():
        scores = repetition_scores(model, history)
        states[user] = (scores, policy.explore_mask(scores.rep_set))

    points = []
    for v in v_values:
        recommendations = [generate_basket(scores, v, k, expl, policy, user)
                           for user, (scores, expl) in states.items()]
        report = evaluate(recommendations, targets, histories, groups, split_data.categories, settings)
        n = max(len(recommendations), 1)
        point = FrontierPoint(
            v=v,
            metrics=MappingProxyType(dict(report.aggregate)),
            repeat_slots=sum(rec.n_repeat for rec in recommendations) / n,
            explore_slots=sum(rec.n_explore for rec in recommendations) / n,
        )
        points.append(point)
        logger.info(f"Sweep {policy.kind} v={v:.6g}: recall@{k}={point.metrics.get(f'recall@{k}', float('nan')):.4f}, "
                    f"mean explore slots {point.explore_slots:.2f}")
    return points


def frontier_frame(points: Sequence) -> pd.DataFrame:
    return pd.DataFrame([point.to_row() for point in points])


def write_frontiers(points: Sequence, directory, k: int, metrics: Sequence,
                    baselines: Optional[pd.DataFrame] = None, policy: str = "") -> list:
    """
    Write frontier_<metric>.csv (v, recall@k, metric@k) per beyond-accuracy
    metric plus a matching HTML chart with baseline markers.
    """
    directory = Path(directory)
    frame = frontier_frame(points)
    write_csv(directory / "frontier.csv", frame)
    written = [directory / "frontier.csv"]
    accuracy = f"recall@{k}"
    for metric in metrics:
        column = f"{metric}@{k}"
        if column not in frame:
            logger.warning(f"frontier metric {column} not computed; skipped")
            continue
        path = directory / f"frontier_{metric}.csv"
        write_csv(path, frame[["v", accuracy, column]])
        written.append(path)
        fig = create_frontier_chart(frame, column, accuracy, baseline_points(baselines, column, accuracy),
                                    title=f"TREx {policy} frontier: {accuracy} vs {column}".replace("  ", " "))
        write_figure(fig, directory / f"frontier_{metric}.html")
    return written


# --------------------------------------------------------------------------
# Ablations
# --------------------------------------------------------------------------

def _repeat_only(model: RepetitionModel, histories: Mapping, k: int) -> list:
    """Baskets of the k best-scored repeat items, without exploration fill."""
    recommendations = []
    for user in sorted(histories):
        ranked = repetition_scores(model, histories[user]).ranked()[:k]
        recommendations.append(Recommendation(user, ranked, (REPEAT,) * len(ranked)))
    return recommendations


def _tune_repetition(train, histories: Mapping, targets: Mapping, k: int, alphas: Sequence, betas: Sequence,
                     rep_feature_enabled: bool, metric: str = "recall") -> tuple:
    key = f"{metric}@{k}"
    best, best_score = None, -math.inf
    for alpha, beta in itertools.product(alphas, betas):
        model = fit_repetition(train, alpha, beta, rep_feature_enabled)
        score = _score(accuracy_summary(_repeat_only(model, histories, k), targets, k)[key])
        if best is None or score > best_score:
            best, best_score = (alpha, beta), score
    return best


def ablation_rep(split_data: SplitDataset, k: int = 10, grid: Optional[Mapping] = None,
                 metric: str = "recall") -> pd.DataFrame:
    """
    Repetition-module ablation on test users with validation-selected parameters.

    Variants score repeat items only (no exploration fill):
    base is beta=1 with item features off (frequency ranking), +T tunes beta
    with features off and +T+RF tunes alpha and beta with features on.
    """
    grid = grid or DEFAULT_GRIDS["trex_rep"]
    alphas, betas = list(grid["alpha"]), list(grid["beta"])
    train = split_data.train
    val_histories = split_data.histories(split_data.validation_users)
    val_targets = split_data.validation_targets()
    test_histories = split_data.histories(split_data.test_users)
    test_targets = split_data.test_targets()

    _, beta_t = _tune_repetition(train, val_histories, val_targets, k, [0.0], betas, False, metric)
    alpha_rf, beta_rf = _tune_repetition(train, val_histories, val_targets, k, alphas, betas, True, metric)
    variants = [
        ("base", 0.0, 1.0, False),
        ("+T", 0.0, beta_t, False),
        ("+T+RF", alpha_rf, beta_rf, True),
    ]
    rows = []
    for name, alpha, beta, enabled in variants:
        model = fit_repetition(train, alpha, beta, enabled)
        summary = accuracy_summary(_repeat_only(model, test_histories, k), test_targets, k)
        rows.append({"variant": name, "alpha": alpha if enabled else None, "beta": beta,
                     "rep_feature": enabled, **summary})
        logger.info(f"Ablation {name}: {summary}")
    return pd.DataFrame(rows)


def sample_ratio_sweep(split_data: SplitDataset, k: int = 10, ratios: Sequence = (0.2, 0.4, 0.6, 0.8, 1.0),
                       seed: int = 0, grid: Optional[Mapping] = None) -> pd.DataFrame:
    """
    Recall of +T and +T+RF when item features are fitted on a seeded share
    of training users; parameters are tuned on validation at ratio 1.
    """
    grid = grid or DEFAULT_GRIDS["trex_rep"]
    val_histories = split_data.histories(split_data.validation_users)
    val_targets = split_data.validation_targets()
    test_histories = split_data.histories(split_data.test_users)
    test_targets = split_data.test_targets()
    _, beta_t = _tune_repetition(split_data.train, val_histories, val_targets, k, [0.0], grid["beta"], False)
    alpha_rf, beta_rf = _tune_repetition(split_data.train, val_histories, val_targets, k,
                                         grid["alpha"], grid["beta"], True)
    key = f"recall@{k}"
    t_model = fit_repetition(split_data.train, 0.0, beta_t, False)
    recall_t = accuracy_summary(_repeat_only(t_model, test_histories, k), test_targets, k)[key]
    rows = []
    for ratio in ratios:
        sub_train = subsample_training(split_data, ratio, seed)
        rf_model = fit_repetition(sub_train, alpha_rf, beta_rf, True)
        recall_rf = accuracy_summary(_repeat_only(rf_model, test_histories, k), test_targets, k)[key]
        rows.append({"ratio": ratio, "n_feature_users": sub_train.n_users, f"{key} +T": recall_t,
                     f"{key} +T+RF": recall_rf, "gain": recall_rf - recall_t})
    return pd.DataFrame(rows)


def explore_accuracy_table(reports: Mapping, k: int) -> pd.DataFrame:
    """Repeat and explore accuracy per method."""
    columns = [f"{name}@{k}" for name in ("recall_rep", "recall_expl", "phr_rep", "phr_expl")]
    rows = [{"method": method, **{c: report.aggregate.get(c, float("nan")) for c in columns}}
            for method, report in reports.items()]
    return pd.DataFrame(rows, columns=["method", *columns])


# --------------------------------------------------------------------------
# Significance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SignificanceResult:
    metric: str
    method_a: str
    method_b: str
    mean_diff: float
    t: float
    p: float
    n: int
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return self.p < 0.05


def paired_ttest(per_user_a: Mapping, per_user_b: Mapping, metric: str = "", method_a: str = "a",
                 method_b: str = "b") -> SignificanceResult:
    """
    Two-sided paired t-test on per-user metric values.

    Users whose value is NaN for either method are dropped. A zero variance
    of the differences gives p=1 when the mean difference is 0, else p=0,
    flagged as degenerate.
    """
    if set(per_user_a) != set(per_user_b):
        raise ValueError("paired t-test needs identical user sets")
    users = sorted(per_user_a)
    a = np.array([per_user_a[u] for u in users], dtype=float)
    b = np.array([per_user_b[u] for u in users], dtype=float)
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    n = int(len(a))
    if n < 2:
        raise ValueError(f"paired t-test needs at least 2 users, got {n}")
    diff = a - b
    mean_diff = float(diff.mean())
    if float(np.var(diff, ddof=1)) == 0.0:
        t = 0.0 if mean_diff == 0 else math.copysign(math.inf, mean_diff)
        return SignificanceResult(metric, method_a, method_b, mean_diff, t, 1.0 if mean_diff == 0 else 0.0, n, True)
    result = stats.ttest_rel(a, b)
    return SignificanceResult(metric, method_a, method_b, mean_diff, float(result.statistic), float(result.pvalue), n)


def significance_frame(results: Sequence) -> pd.DataFrame:
    columns = ["metric", "method_a", "method_b", "mean_diff", "t", "p", "n", "degenerate", "significant"]
    return pd.DataFrame([{**asdict(r), "significant": r.significant} for r in results], columns=columns)


# --------------------------------------------------------------------------
# Method comparison
# --------------------------------------------------------------------------

@dataclass
class MethodRun:
    name: str
    params: Mapping
    recommendations: list
    report: MetricReport


@dataclass
class Comparison:
    runs: dict
    significance: pd.DataFrame

    @property
    def aggregate(self) -> pd.DataFrame:
        return pd.concat([run.report.aggregate_frame(name) for name, run in self.runs.items()], ignore_index=True)

    @property
    def reports(self) -> dict:
        return {name: run.report for name, run in self.runs.items()}


def resolve_params(method, split_data: SplitDataset, k: int, seed: int, groups: GroupAssignment,
                   selection_metric: str = "recall", output_dir=None) -> dict:
    """Configured parameters, overlaid with the validation-best grid cell when a grid is configured."""
    params = dict(method.params)
    if method.grid:
        spec = GridSpec(method.name, method.grid, selection_metric, fixed=params)
        params = dict(grid_search(spec, split_data, k, seed, groups, output_dir).best_params)
    return params


def run_method(name: str, params: Mapping, split_data: SplitDataset, settings: EvaluationSettings,
               groups: GroupAssignment, seed: int = 0) -> MethodRun:
    """Fit on the training corpus, recommend for test users and evaluate."""
    recommender = instantiate(name, params, seed, groups).fit(split_data.train)
    histories = split_data.histories(split_data.test_users)
    recommendations = recommender.recommend_many(histories, settings.k)
    report = evaluate(recommendations, split_data.test_targets(), histories, groups, split_data.categories, settings)
    logger.info(f"{name}: recall@{settings.k}={report.aggregate.get(f'recall@{settings.k}', float('nan')):.4f}")
    return MethodRun(name, MappingProxyType(recommender.params()), recommendations, report)


def compare_methods(split_data: SplitDataset, methods: Sequence, settings: EvaluationSettings,
                    groups: Optional[GroupAssignment] = None, seed: int = 0, reference: str = "trex_rep",
                    selection_metric: str = "recall", output_dir=None) -> Comparison:
    """
    Tune (where a grid is configured), run and evaluate several methods on
    the test users, then paired t-test each against the reference method on
    per-user Recall, NDCG and PHR.
    """
    groups = groups or group_assignment(split_data.train)
    runs = {}
    for method in methods:
        params = resolve_params(method, split_data, settings.k, seed, groups, selection_metric, output_dir)
        runs[method.name] = run_method(method.name, params, split_data, settings, groups, seed)

    results = []
    if reference in runs:
        base = runs[reference].report.per_user
        for name, run in runs.items():
            if name == reference:
                continue
            for metric in ACCURACY_METRICS:
                key = f"{metric}@{settings.k}"
                results.append(paired_ttest(
                    {u: row[key] for u, row in run.report.per_user.items()},
                    {u: row[key] for u, row in base.items()},
                    key, name, reference))
    elif len(runs) > 1:
        logger.warning(f"reference method {reference} not among the compared methods; no significance tests")
    return Comparison(runs, significance_frame(results))


def write_report(comparison: Comparison, directory, k: int) -> list:
    """report.json, report.csv, significance.csv, per-user CSVs and report.xlsx."""
    directory = Path(directory)
    aggregate = comparison.aggregate
    explore = explore_accuracy_table(comparison.reports, k)
    write_json(directory / "report.json", {
        name: {**run.report.to_dict(), "params": dict(run.params)} for name, run in comparison.runs.items()
    })
    write_csv(directory / "report.csv", aggregate)
    write_csv(directory / "significance.csv", comparison.significance)
    write_csv(directory / "explore_accuracy.csv", explore)
    sheets = {"aggregate": aggregate, "significance": comparison.significance, "explore_accuracy": explore}
    for name, run in comparison.runs.items():
        per_user = run.report.per_user_frame()
        write_csv(directory / f"per_user_{name}.csv", per_user)
        sheets[f"per_user_{name}"] = per_user
    write_excel(directory / "report.xlsx", sheets)
    logger.info(f"Wrote reports for {len(comparison.runs)} method(s) to {directory}")
    return [directory / name for name in ("report.json", "report.csv", "significance.csv", "report.xlsx")]


# --------------------------------------------------------------------------
# Run manifest
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    """Resolved config, seeds, corpus hash and output hashes of one subcommand run."""

    command: str
    config: Mapping
    corpus_hash: Optional[str] = None
    version: str = __version__
    seeds: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = round(time.perf_counter() - start, 3)

    def record_outputs(self, directory) -> dict:
        """SHA-256 of every deterministic output file directly in the directory (text formats only)."""
        directory = Path(directory)
        self.outputs = {
            path.name: file_sha256(path)
            for path in sorted(directory.iterdir())
            if path.is_file() and path.suffix in DETERMINISTIC_SUFFIXES and path.name != "manifest.json"
        }
        return self.outputs

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": dict(self.config),
            "corpus_hash": self.corpus_hash,
            "version": self.version,
            "seeds": dict(self.seeds),
            "stage_seconds": dict(self.stage_seconds),
            "outputs": dict(self.outputs),
            "options": dict(self.options),
        }

    def write(self, directory) -> Path:
        return write_json(Path(directory) / "manifest.json", self.to_dict())

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["command"], data["config"], data.get("corpus_hash"), data.get("version", __version__),
                   data.get("seeds", {}), data.get("stage_seconds", {}), data.get("outputs", {}),
                   data.get("options", {}))
