"""Pipeline configuration: a YAML file with a fixed key list.

Top-level keys (all optional unless noted)::

    data:
      manifest: path/to/manifest.csv        # real data, or
      synthetic: {seed, countries_per_family, years, start_year, noise}
    splits: {train_end, val_end, test_end}   # dates; defaults: val 2020, test 2021
                                             # (synthetic: the last two years)
    clusters: {k}
    hpo: {n_trials, n_startup, gamma, n_candidates, rungs, eta,
          space: {num_layers, layer_sizes, lookbacks, lr_range, batch_sizes}}
    training: {max_epochs, patience, activation, anchored_windows}
    transfer: {source_members, pool_weighting}   # 1 / "uniform" by default
    ensemble_size: int
    imputation: {a, history_weeks}
    outlier_multiplier: float
    master_seed: int
    output_dir: path                         # required
    workers: int
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import pandas as pd
import yaml

from .data import SplitSpec, synthesize_dataset, two_family_presets
from .experiments import ExperimentSettings
from .hpo import SearchSpace
from .nn import ACTIVATIONS
from .wrangling import ImputationParams


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    seed: int = 0
    countries_per_family: int = 3
    years: int = 3
    start_year: int = 2019
    noise: float = 0.02

    def build(self):
        return synthesize_dataset(self.seed, two_family_presets(self.noise), self.countries_per_family,
                                  self.years, self.start_year)


@dataclass
class PipelineConfig:
    output_dir: Path
    manifest: Path | None = None
    synthetic: SyntheticSpec | None = None
    splits: SplitSpec | None = None
    k: int = 4
    n_trials: int = 100
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24
    rungs: tuple[int, ...] = (5, 15, 45)
    eta: int = 3
    space: SearchSpace = field(default_factory=SearchSpace)
    max_epochs: int = 200
    patience: int = 10
    activation: str = "relu"
    anchored_windows: bool = True
    source_members: int = 1
    pool_weighting: str = "uniform"
    ensemble_size: int = 20
    imputation: ImputationParams = field(default_factory=ImputationParams)
    outlier_multiplier: float = 4.5
    master_seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if (self.manifest is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data.manifest or data.synthetic is required")
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ConfigError(f"manifest not found: {self.manifest}")
        for name in ("n_trials", "ensemble_size", "k", "workers", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_epochs < self.patience:
            raise ConfigError("max_epochs must be >= patience")
        if self.outlier_multiplier <= 0:
            raise ConfigError("outlier_multiplier must be > 0")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {sorted(ACTIVATIONS)}")
        try:
            self.settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved_splits(self) -> SplitSpec:
        if self.splits is not None:
            return self.splits
        if self.synthetic is not None:
            return SplitSpec.yearly(self.synthetic.start_year + self.synthetic.years - 2)
        return SplitSpec.yearly(2020)

    def settings(self) -> ExperimentSettings:
        return ExperimentSettings(
            n_trials=self.n_trials, ensemble_size=self.ensemble_size, space=self.space,
            max_epochs=self.max_epochs, patience=self.patience, n_startup=self.n_startup,
            gamma=self.gamma, n_candidates=self.n_candidates, rungs=tuple(self.rungs), eta=self.eta,
            activation=self.activation, master_seed=self.master_seed,
            source_members=self.source_members, pool_weighting=self.pool_weighting,
            anchored_windows=self.anchored_windows)

    def to_dict(self) -> dict:
        sp = self.resolved_splits()
        out: dict[str, Any] = {"data": {}}
        if self.manifest is not None:
            out["data"]["manifest"] = str(self.manifest)
        if self.synthetic is not None:
            out["data"]["synthetic"] = asdict(self.synthetic)
        out["splits"] = {k: str(getattr(sp, k).date()) for k in ("train_end", "val_end", "test_end")}
        out["clusters"] = {"k": self.k}
        space = asdict(self.space)
        space.pop("horizon")
        out["hpo"] = {"n_trials": self.n_trials, "n_startup": self.n_startup, "gamma": self.gamma,
                      "n_candidates": self.n_candidates, "rungs": list(self.rungs), "eta": self.eta,
                      "space": {k: list(v) for k, v in space.items()}}
        out["training"] = {"max_epochs": self.max_epochs, "patience": self.patience,
                           "activation": self.activation, "anchored_windows": self.anchored_windows}
        out["transfer"] = {"source_members": self.source_members, "pool_weighting": self.pool_weighting}
        out["ensemble_size"] = self.ensemble_size
        out["imputation"] = asdict(self.imputation)
        out["outlier_multiplier"] = self.outlier_multiplier
        out["master_seed"] = self.master_seed
        out["output_dir"] = str(self.output_dir)
        out["workers"] = self.workers
        return out

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


_TOP = {"data", "splits", "clusters", "hpo", "training", "transfer", "ensemble_size", "imputation",
        "outlier_multiplier", "master_seed", "output_dir", "workers"}


def _check_keys(section: str, d: dict, allowed) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


def desk_scale_overrides(cfg: PipelineConfig, k_given: bool = False) -> PipelineConfig:
    """10 trials, 5 members, reduced search space; synthetic two-family data
    (clustered with k=2) when no data is configured."""
    s = ExperimentSettings.desk(cfg.master_seed)
    cfg.n_trials, cfg.ensemble_size, cfg.space = s.n_trials, s.ensemble_size, s.space
    cfg.max_epochs, cfg.n_startup = s.max_epochs, s.n_startup
    if cfg.manifest is None and cfg.synthetic is None:
        cfg.synthetic = SyntheticSpec()
    if cfg.synthetic is not None and not k_given:
        cfg.k = 2
    return cfg


def from_dict(raw: dict, base_dir: Path | None = None, desk_scale: bool = False) -> PipelineConfig:
    raw = dict(raw or {})
    _check_keys("config", raw, _TOP)
    base_dir = base_dir or Path(".")

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    if "output_dir" not in raw:
        raise ConfigError("output_dir is required")
    cfg = PipelineConfig(output_dir=path(raw["output_dir"]))
    data = raw.get("data") or {}
    _check_keys("data", data, {"manifest", "synthetic"})
    if "manifest" in data:
        cfg.manifest = path(data["manifest"])
    if "synthetic" in data:
        syn = data["synthetic"] or {}
        _check_keys("data.synthetic", syn, {f.name for f in fields(SyntheticSpec)})
        cfg.synthetic = SyntheticSpec(**syn)
    if "splits" in raw:
        sp = raw["splits"]
        _check_keys("splits", sp, {"train_end", "val_end", "test_end"})
        try:
            cfg.splits = SplitSpec(pd.Timestamp(sp["train_end"]), pd.Timestamp(sp["val_end"]),
                                   pd.Timestamp(sp["test_end"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid splits: {exc}") from exc
    if "clusters" in raw:
        _check_keys("clusters", raw["clusters"], {"k"})
        cfg.k = int(raw["clusters"].get("k", cfg.k))
    if desk_scale:
        desk_scale_overrides(cfg, k_given="clusters" in raw)
    hpo = raw.get("hpo") or {}
    _check_keys("hpo", hpo, {"n_trials", "n_startup", "gamma", "n_candidates", "rungs", "eta", "space"})
    for key in ("n_trials", "n_startup", "n_candidates", "eta"):
        if key in hpo:
            setattr(cfg, key, int(hpo[key]))
    if "gamma" in hpo:
        cfg.gamma = float(hpo["gamma"])
    if "rungs" in hpo:
        cfg.rungs = tuple(int(r) for r in hpo["rungs"])
    if "space" in hpo:
        sp = hpo["space"]
        _check_keys("hpo.space", sp, {"num_layers", "layer_sizes", "lookbacks", "lr_range", "batch_sizes"})
        try:
            cfg.space = SearchSpace(**{k: tuple(v) for k, v in sp.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid search space: {exc}") from exc
    tr = raw.get("training") or {}
    _check_keys("training", tr, {"max_epochs", "patience", "activation", "anchored_windows"})
    for key in ("max_epochs", "patience"):
        if key in tr:
            setattr(cfg, key, int(tr[key]))
    if "activation" in tr:
        cfg.activation = str(tr["activation"])
    if "anchored_windows" in tr:
        cfg.anchored_windows = bool(tr["anchored_windows"])
    tf = raw.get("transfer") or {}
    _check_keys("transfer", tf, {"source_members", "pool_weighting"})
    if "source_members" in tf:
        cfg.source_members = int(tf["source_members"])
    if "pool_weighting" in tf:
        cfg.pool_weighting = str(tf["pool_weighting"])
    if "ensemble_size" in raw:
        cfg.ensemble_size = int(raw["ensemble_size"])
    if "imputation" in raw:
        try:
            cfg.imputation = ImputationParams(**raw["imputation"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid imputation params: {exc}") from exc
    for key, cast in (("outlier_multiplier", float), ("master_seed", int), ("workers", int)):
        if key in raw:
            setattr(cfg, key, cast(raw[key]))
    cfg.validate()
    return cfg


def load_config(path, desk_scale: bool = False) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return from_dict(raw or {}, base_dir=path.parent, desk_scale=desk_scale)
