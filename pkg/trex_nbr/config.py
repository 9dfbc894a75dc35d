"""
YAML run configuration.

A run config has the blocks ``dataset``, ``methods`` (or a single
``method``), ``evaluation``, ``experiment``, ``output`` and ``logging``.
Everything is resolved into frozen dataclasses with defaults filled, so the
resolved form can be echoed into a run manifest and loaded back from it.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .utils import ConfigError

logger = logging.getLogger(__name__)

DATASET_FORMATS = ("canonical", "instacart", "dunnhumby", "synthetic")
FAIRNESS_MODELS = ("log", "cascade")
SELECTION_METRICS = ("recall", "ndcg", "phr")
DEFAULT_V_QUANTILES = tuple(round(0.05 * i, 2) for i in range(21))
DEFAULT_SAMPLE_RATIOS = (0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_FRONTIER_METRICS = ("logdp", "logeur", "logrur", "eel", "eed", "ild", "entropy", "ds")


def _check_keys(block: str, data: Mapping, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{block}': {sorted(unknown)}")


def _build(cls, block: str, data: Optional[Mapping]):
    data = {} if data is None else data
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{block}' must be a mapping")
    _check_keys(block, data, [f.name for f in fields(cls)])
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{block}' block: {e}") from e


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 200
    n_items: int = 300
    n_categories: int = 12
    baskets_per_user: int = 8
    basket_size: int = 6
    repeat_prob: float = 0.5
    popularity_skew: float = 1.0

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.n_categories, self.baskets_per_user, self.basket_size) <= 0:
            raise ValueError("synthetic sizes must be positive")


@dataclass(frozen=True)
class DatasetConfig:
    format: str = "canonical"
    path: Optional[str] = None
    corpus_dir: Optional[str] = None
    columns: Mapping = field(default_factory=dict)
    min_baskets: int = 3
    min_item_count: int = 5
    basket_cap: int = 50
    sample_users: Optional[int] = None
    seed: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.format not in DATASET_FORMATS:
            raise ValueError(f"format must be one of {DATASET_FORMATS}")
        if self.format != "synthetic" and self.path is None and self.corpus_dir is None:
            raise ValueError("a path to the raw corpus is required")
        if self.min_baskets < 2 or self.min_item_count < 1 or self.basket_cap < 1:
            raise ValueError("min_baskets >= 2, min_item_count >= 1 and basket_cap >= 1 are required")
        if self.sample_users is not None and self.sample_users < 1:
            raise ValueError("sample_users must be positive")
        if isinstance(self.synthetic, Mapping):
            object.__setattr__(self, "synthetic", _build(SyntheticConfig, "dataset.synthetic", self.synthetic))
        object.__setattr__(self, "columns", dict(self.columns or {}))


@dataclass(frozen=True)
class MethodConfig:
    name: str
    params: Mapping = field(default_factory=dict)
    grid: Mapping = field(default_factory=dict)

    def __post_init__(self):
        from .baselines import METHODS

        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name}; choose from {sorted(METHODS)}")
        grid = dict(self.grid or {})
        for key, values in grid.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise ValueError(f"grid for {key} must be a non-empty list")
        object.__setattr__(self, "params", dict(self.params or {}))
        object.__setattr__(self, "grid", {key: list(values) for key, values in grid.items()})


@dataclass(frozen=True)
class EvaluationConfig:
    k: int = 10
    fairness_model: str = "log"
    cascade_gamma: float = 0.8
    cascade_stop: float = 0.5
    delta: float = 1e-6
    top_share: float = 0.2
    normalize_by_group_size: bool = False
    selection_metric: str = "recall"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.k not in (10, 20):
            logger.warning(f"basket size k={self.k} differs from the usual 10 or 20")
        if self.fairness_model not in FAIRNESS_MODELS:
            raise ValueError(f"fairness_model must be one of {FAIRNESS_MODELS}")
        if not 0 < self.cascade_gamma <= 1 or not 0 <= self.cascade_stop <= 1:
            raise ValueError("cascade_gamma must be in (0, 1] and cascade_stop in [0, 1]")
        if self.delta <= 0 or not 0 < self.top_share < 1:
            raise ValueError("delta must be positive and top_share in (0, 1)")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")

    def settings(self):
        from .metrics import Cascade, EvaluationSettings, LogDiscount

        cascade = Cascade(self.cascade_gamma, self.cascade_stop)
        return EvaluationSettings(
            k=self.k,
            fairness_model=cascade if self.fairness_model == "cascade" else LogDiscount(),
            expected_exposure_model=cascade,
            delta=self.delta,
            normalize_by_group_size=self.normalize_by_group_size,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    v_quantiles: tuple = DEFAULT_V_QUANTILES
    sample_ratios: tuple = DEFAULT_SAMPLE_RATIOS
    frontier_metrics: tuple = DEFAULT_FRONTIER_METRICS
    reference_method: str = "trex_rep"

    def __post_init__(self):
        object.__setattr__(self, "v_quantiles", tuple(float(q) for q in self.v_quantiles))
        object.__setattr__(self, "sample_ratios", tuple(float(r) for r in self.sample_ratios))
        object.__setattr__(self, "frontier_metrics", tuple(self.frontier_metrics))
        if not self.v_quantiles or any(not 0 <= q <= 1 for q in self.v_quantiles):
            raise ValueError("v_quantiles must be a non-empty list in [0, 1]")
        if list(self.v_quantiles) != sorted(self.v_quantiles):
            raise ValueError("v_quantiles must be sorted ascending")
        if not self.sample_ratios or any(not 0 < r <= 1 for r in self.sample_ratios):
            raise ValueError("sample_ratios must be a non-empty list in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    methods: tuple
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output_dir: str = "out"
    log_level: str = "INFO"

    @property
    def method(self) -> MethodConfig:
        return self.methods[0]

    @property
    def corpus_dir(self) -> Path:
        if self.dataset.corpus_dir:
            return Path(self.dataset.corpus_dir)
        return Path(self.output_dir) / "corpus"

    def method_named(self, name: str) -> MethodConfig:
        for method in self.methods:
            if method.name == name:
                return method
        return MethodConfig(name)

    def to_dict(self) -> dict:
        return {
            "dataset": asdict(self.dataset),
            "methods": [asdict(method) for method in self.methods],
            "evaluation": asdict(self.evaluation),
            "experiment": {key: list(value) if isinstance(value, tuple) else value
                           for key, value in asdict(self.experiment).items()},
            "output": {"directory": self.output_dir},
            "logging": {"level": self.log_level},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("the config file must hold a mapping at the top level")
        _check_keys("config", data, ["dataset", "method", "methods", "evaluation", "experiment", "output", "logging"])
        if "dataset" not in data:
            raise ConfigError("missing required block 'dataset'")
        if "method" in data and "methods" in data:
            raise ConfigError("give either 'method' or 'methods', not both")
        raw_methods = data.get("methods")
        if raw_methods is None:
            raw_methods = [data["method"]] if "method" in data else [{"name": "trex_rep"}]
        if not isinstance(raw_methods, list) or not raw_methods:
            raise ConfigError("'methods' must be a non-empty list")
        methods = tuple(_build(MethodConfig, f"methods[{i}]", m) for i, m in enumerate(raw_methods))
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate methods in {names}")
        output = data.get("output") or {}
        _check_keys("output", output, ["directory"])
        logging_block = data.get("logging") or {}
        _check_keys("logging", logging_block, ["level"])
        return cls(
            dataset=_build(DatasetConfig, "dataset", data["dataset"]),
            methods=methods,
            evaluation=_build(EvaluationConfig, "evaluation", data.get("evaluation")),
            experiment=_build(ExperimentConfig, "experiment", data.get("experiment")),
            output_dir=str(output.get("directory", "out")),
            log_level=str(logging_block.get("level", "INFO")).upper(),
        )


def load_config(path) -> RunConfig:
    """
    Read a YAML run config, or the ``config`` block of a run manifest
    (any ``.json`` file), into a RunConfig.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            data = data.get("config") if isinstance(data, dict) and "config" in data else data
        else:
            data = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    config = RunConfig.from_dict(data)
    logger.info(f"Loaded config {path} ({len(config.methods)} method(s), k={config.evaluation.k})")
    return config
