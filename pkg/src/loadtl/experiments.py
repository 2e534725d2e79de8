"""Baseline, All-but-One, Cluster-but-One and seasonal-naive experiments.

Transfer setups pre-train one source model on pooled windows of the source
countries (with a hyperparameter study), then warm-start and fine-tune
``ensemble_size`` copies on the target, each with its own shuffling seed.
The baseline runs its own study on the target alone and trains the
ensemble from scratch.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import evaluation
from .data import LoadSeries, SplitSpec, split_series
from .hpo import SearchSpace, StudyState, Trial, run_study, write_study_log
from .nn import (DivergenceError, Hyperparameters, History, MLPModel, Scaler, TrainConfig, WindowSet,
                 fit_scaler, forward, init_model, make_windows, save_model, train)
from .profiling import ClusterAssignment
from .seeds import derive_seed

log = logging.getLogger(__name__)


class SetupKind(str, enum.Enum):
    BASELINE = "baseline"
    ABO = "abo"
    CBO = "cbo"
    SNAIVE = "snaive"

    @property
    def label(self) -> str:
        return {"baseline": evaluation.BASELINE, "abo": evaluation.ABO,
                "cbo": evaluation.CBO, "snaive": evaluation.SNAIVE}[self.value]

    @property
    def is_transfer(self) -> bool:
        return self in (SetupKind.ABO, SetupKind.CBO)


class ExperimentError(RuntimeError):
    pass


POOL_WEIGHTINGS = ("uniform", "per_country")


@dataclass(frozen=True)
class ExperimentSettings:
    """Budgets for one experiment. Defaults follow the full protocol."""

    n_trials: int = 100
    ensemble_size: int = 20
    space: SearchSpace = field(default_factory=SearchSpace)
    max_epochs: int = 200
    patience: int = 10
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24
    rungs: tuple[int, ...] = (5, 15, 45)
    eta: int = 3
    activation: str = "relu"
    master_seed: int = 0
    source_members: int = 1          # >1: ensemble of source models, target members cycle over them
    pool_weighting: str = "uniform"  # or "per_country": tile smaller countries' train windows
    anchored_windows: bool = True    # False: hourly-strided train/val windows

    def __post_init__(self):
        if self.source_members < 1:
            raise ValueError("source_members must be >= 1")
        if self.pool_weighting not in POOL_WEIGHTINGS:
            raise ValueError(f"pool_weighting must be one of {POOL_WEIGHTINGS}")

    @classmethod
    def desk(cls, master_seed: int = 0) -> "ExperimentSettings":
        return cls(n_trials=10, ensemble_size=5, space=SearchSpace.desk(), max_epochs=150,
                   n_startup=5, master_seed=master_seed)

    def train_config(self, seed: int, max_epochs: int | None = None) -> TrainConfig:
        return TrainConfig(max_epochs=self.max_epochs if max_epochs is None else max_epochs,
                           patience=self.patience, seed=seed)

    def study_kwargs(self) -> dict:
        return dict(gamma=self.gamma, n_candidates=self.n_candidates, n_startup=self.n_startup,
                    rungs=self.rungs, eta=self.eta)


@dataclass(frozen=True)
class ExperimentPlan:
    setup: SetupKind
    target: str
    source_countries: tuple[str, ...]
    splits: SplitSpec
    hparams: Hyperparameters | None = None
    ensemble_size: int = 20
    master_seed: int = 0

    def __post_init__(self):
        if self.target in self.source_countries:
            raise ValueError("target cannot be a source country")

    def to_dict(self) -> dict:
        return {
            "setup": self.setup.value,
            "target": self.target,
            "source_countries": list(self.source_countries),
            "splits": {k: str(getattr(self.splits, k)) for k in ("train_end", "val_end", "test_end")},
            "hparams": None if self.hparams is None else asdict(self.hparams),
            "ensemble_size": self.ensemble_size,
            "master_seed": self.master_seed,
        }


def build_source_set(setup: SetupKind, target: str, countries: Sequence[str],
                     clusters: ClusterAssignment | None = None) -> list[str]:
    """Source countries for a target: everyone else (AbO), the target's
    cluster-mates (CbO), nobody (Baseline, sNaive)."""
    setup = SetupKind(setup)
    if target not in countries:
        raise ExperimentError(f"target {target} not in dataset")
    if setup is SetupKind.ABO:
        return [c for c in countries if c != target]
    if setup is SetupKind.CBO:
        if clusters is None or target not in clusters.mapping:
            raise ExperimentError(f"CbO needs a cluster assignment covering {target}")
        k = clusters.cluster_of(target)
        sources = [c for c in countries if c != target and clusters.mapping.get(c) == k]
        if not sources:
            raise ExperimentError(f"{target} is alone in cluster {k}; use the AbO setup instead")
        return sources
    return []


# ---------------------------------------------------------------------------
# Data preparation


class CountryData:
    """A wrangled series with its train-fitted scaler and cached windows."""

    PARTS = ("train", "val", "test")

    def __init__(self, series: LoadSeries, splits: SplitSpec, anchored: bool = True):
        self.series = series
        self.splits = splits
        self.anchored = anchored
        train_part, _, _ = split_series(series, splits)
        self.scaler = fit_scaler(train_part.values)
        self._raw: dict[tuple[int, str], WindowSet] = {}
        self._scaled: dict[tuple[int, str], WindowSet] = {}

    @property
    def code(self) -> str:
        return self.series.country_code

    def bounds(self, part: str):
        s = self.splits
        return {"train": (None, s.train_end), "val": (s.train_end, s.val_end),
                "test": (s.val_end, s.test_end)}[part]

    def windows(self, lookback: int, part: str) -> WindowSet:
        """Raw (MW) windows whose targets fall in ``part``; test windows are
        always midnight-anchored day-ahead samples."""
        key = (lookback, part)
        if key not in self._raw:
            start, stop = self.bounds(part)
            ws = make_windows(self.series, lookback, 24, start=start, stop=stop,
                              anchored=self.anchored or part == "test")
            if len(ws) == 0:
                raise ExperimentError(f"{self.code}: no {part} windows for lookback {lookback}")
            self._raw[key] = ws
        return self._raw[key]

    def scaled(self, lookback: int, part: str) -> WindowSet:
        key = (lookback, part)
        if key not in self._scaled:
            self._scaled[key] = self.windows(lookback, part).scaled(self.scaler)
        return self._scaled[key]


def pooled(countries: Sequence[CountryData], lookback: int, part: str,
           weighting: str = "uniform") -> WindowSet:
    """Concatenate each country's scaled windows.

    ``uniform`` treats every window alike; ``per_country`` tiles each
    country's windows up to the largest count so countries with shorter
    histories weigh equally in the pooled mini-batches.
    """
    sets = [c.scaled(lookback, part) for c in countries]
    if weighting == "per_country":
        n = max(len(ws) for ws in sets)
        sets = [WindowSet(ws.inputs[idx], ws.targets[idx], ws.anchors[idx])
                for ws in sets for idx in [np.arange(n) % len(ws)]]
    return WindowSet.concat(sets)


def predict_mw(models: Sequence[MLPModel], scaler: Scaler, inputs_mw: np.ndarray) -> np.ndarray:
    """Member mean in scaled space, inverted to MW."""
    z = scaler.transform(inputs_mw)
    mean = np.mean([forward(m, z) for m in models], axis=0)
    return scaler.inverse(mean)


def pooled_mape(models: Sequence[MLPModel], countries: Sequence[CountryData], lookback: int,
                part: str) -> float:
    actual, pred = [], []
    for c in countries:
        ws = c.windows(lookback, part)
        actual.append(ws.targets)
        pred.append(predict_mw(models, c.scaler, ws.inputs))
    return evaluation.mape(np.concatenate(actual), np.concatenate(pred))


# ---------------------------------------------------------------------------
# Building blocks


def warm_start(source: MLPModel) -> MLPModel:
    """Independent copy of the source model's parameters and hyperparameters."""
    return source.copy()


def fine_tune(model: MLPModel, target: CountryData, config: TrainConfig) -> tuple[MLPModel, History]:
    """Continue training a warm-started model on the target's own windows."""
    lb = model.hparams.lookback
    return train(model, target.scaled(lb, "train"), target.scaled(lb, "val"), config)


@dataclass
class EnsembleModel:
    members: list[MLPModel]
    scaler: Scaler
    histories: list[History] = field(default_factory=list)

    @property
    def hparams(self) -> Hyperparameters:
        return self.members[0].hparams

    def predict(self, window_mw) -> np.ndarray:
        return ensemble_predict(self, window_mw)


def ensemble_predict(ensemble: EnsembleModel, window_mw) -> np.ndarray:
    """Average of member forecasts, in MW."""
    w = np.asarray(window_mw, dtype=np.float64)
    if w.shape[-1] != ensemble.hparams.lookback:
        raise ValueError(f"window length {w.shape[-1]} != lookback {ensemble.hparams.lookback}")
    return predict_mw(ensemble.members, ensemble.scaler, w)


def train_ensemble(hparams: Hyperparameters, data: CountryData, n: int, master_seed: int,
                   settings: ExperimentSettings, role: str = "member",
                   init: MLPModel | Sequence[MLPModel] | None = None) -> EnsembleModel:
    """Train ``n`` members that differ only in their seeds.

    Without ``init`` each member is freshly initialized; with ``init`` every
    member is warm-started from it (member ``i`` from ``init[i % len(init)]``
    when several source models are given) and fine-tuned with its own
    shuffling seed. A diverging member is retried once with an alternate seed.
    """
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    if isinstance(init, MLPModel):
        init = [init]
    members, histories = [], []
    for i in range(n):
        for attempt in (role, role + "/retry"):
            seed = derive_seed(master_seed, attempt, i)
            model = (init_model(hparams, seed, settings.activation) if init is None
                     else warm_start(init[i % len(init)]))
            try:
                model, hist = fine_tune(model, data, settings.train_config(derive_seed(seed, "shuffle")))
                break
            except DivergenceError:
                log.warning("%s member %d diverged (%s)", data.code, i, attempt)
        else:
            raise DivergenceError(f"{data.code}: ensemble member {i} diverged twice")
        members.append(model)
        histories.append(hist)
    return EnsembleModel(members, data.scaler, histories)


def snaive_forecast(series: LoadSeries, t) -> np.ndarray:
    """Next 24 hours from ``t`` repeated from one week earlier."""
    pos = series.position(t)
    if pos - 168 < 0 or pos - 168 + 24 > len(series):
        raise ValueError(f"insufficient history for a seasonal-naive forecast at {t}")
    out = series.values[pos - 168: pos - 168 + 24]
    if np.any(np.isnan(out)):
        raise ValueError(f"missing history for a seasonal-naive forecast at {t}")
    return out.copy()


def _study(countries: Sequence[CountryData], settings: ExperimentSettings, seed: int,
           log_path=None) -> tuple[Trial, StudyState, dict[int, tuple[MLPModel, History]]]:
    """Hyperparameter study on pooled windows; keeps each completed trial's model."""
    fitted: dict[int, tuple[MLPModel, History]] = {}
    counter = iter(range(10**9))

    def evaluator(hp: Hyperparameters, trial_seed: int, report) -> float:
        tid = next(counter)
        tr = pooled(countries, hp.lookback, "train", settings.pool_weighting)
        va = pooled(countries, hp.lookback, "val")
        model = init_model(hp, trial_seed, settings.activation)
        model, hist = train(model, tr, va, settings.train_config(derive_seed(trial_seed, "shuffle")),
                            reporter=report)
        fitted[tid] = (model, hist)
        return pooled_mape([model], countries, hp.lookback, "val")

    best, state = run_study(evaluator, settings.space, settings.n_trials, seed, log_path=log_path,
                            **settings.study_kwargs())
    return best, state, fitted


@dataclass
class SourceModel:
    model: MLPModel
    hparams: Hyperparameters
    study: StudyState
    history: History
    val_mape: float
    extra: list[MLPModel] = field(default_factory=list)   # further source members, if configured

    @property
    def members(self) -> list[MLPModel]:
        return [self.model] + self.extra


def pretrain_source(sources: Sequence[CountryData], settings: ExperimentSettings, seed: int,
                    log_path=None) -> SourceModel:
    """Tune and train a model on the pooled source countries.

    The best trial's model, trained to its early-stopping point, is the
    source model. With ``settings.source_members > 1`` further source models
    are trained from fresh seeds with the winning hyperparameters.
    """
    if not sources:
        raise ExperimentError("source set is empty")
    min_lb = min(settings.space.lookbacks)
    n_train = sum(len(c.windows(min_lb, "train")) for c in sources)
    if n_train < min(settings.space.batch_sizes):
        raise ExperimentError(f"source pool has {n_train} samples, fewer than one batch")
    best, state, fitted = _study(sources, settings, seed, log_path)
    model, hist = fitted[best.id]
    lb = best.hparams.lookback
    extra = []
    for j in range(1, settings.source_members):
        s = derive_seed(seed, "source-member", j)
        m, _ = train(init_model(best.hparams, s, settings.activation),
                     pooled(sources, lb, "train", settings.pool_weighting), pooled(sources, lb, "val"),
                     settings.train_config(derive_seed(s, "shuffle")))
        extra.append(m)
    return SourceModel(model, best.hparams, state, hist, best.objective, extra)


# ---------------------------------------------------------------------------
# Experiment runner


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    mape: float
    forecasts: pd.DataFrame          # timestamp, actual_mw, forecast_mw
    timing: dict[str, float]
    epochs: list[int] = field(default_factory=list)   # stopped epoch per member
    ensemble: EnsembleModel | None = None
    source: SourceModel | None = None
    study: StudyState | None = None


def _forecast_frame(anchors: pd.DatetimeIndex, actual: np.ndarray, pred: np.ndarray) -> pd.DataFrame:
    offsets = pd.to_timedelta(np.tile(np.arange(actual.shape[1]), len(anchors)), unit="h")
    stamps = anchors.repeat(actual.shape[1]) + offsets
    return pd.DataFrame({"timestamp": stamps, "actual_mw": actual.ravel(),
                         "forecast_mw": pred.ravel()})


def write_forecasts(frame: pd.DataFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "actual_mw", "forecast_mw"])
        for ts, a, f in zip(frame["timestamp"], frame["actual_mw"], frame["forecast_mw"]):
            w.writerow([ts.isoformat(), repr(float(a)), repr(float(f))])


class Runner:
    """Runs experiments over one prepared dataset, caching source models by
    source set so AbO/CbO targets sharing a source pool reuse it."""

    def __init__(self, series: Mapping[str, LoadSeries], splits: SplitSpec,
                 settings: ExperimentSettings, clusters: ClusterAssignment | None = None):
        self.data = {code: CountryData(s, splits, settings.anchored_windows) for code, s in series.items()}
        self.splits = splits
        self.settings = settings
        self.clusters = clusters
        self._sources: dict[tuple[str, ...], tuple[SourceModel, float]] = {}

    @property
    def countries(self) -> list[str]:
        return list(self.data)

    def plan(self, setup: SetupKind, target: str) -> ExperimentPlan:
        setup = SetupKind(setup)
        sources = build_source_set(setup, target, self.countries, self.clusters)
        return ExperimentPlan(setup, target, tuple(sources), self.splits,
                              ensemble_size=self.settings.ensemble_size,
                              master_seed=self.settings.master_seed)

    def source_model(self, sources: tuple[str, ...], log_path=None) -> tuple[SourceModel, float]:
        key = tuple(sorted(sources))
        if key not in self._sources:
            t0 = time.perf_counter()
            seed = derive_seed(self.settings.master_seed, "source/" + "-".join(key))
            src = pretrain_source([self.data[c] for c in key], self.settings, seed)
            self._sources[key] = (src, (time.perf_counter() - t0) / 60.0)
        src, minutes = self._sources[key]
        if log_path is not None:
            write_study_log(src.study, log_path)
        return src, minutes

    def run(self, setup: SetupKind, target: str, out_dir=None) -> ExperimentResult:
        plan = self.plan(setup, target)
        setup = plan.setup
        st = self.settings
        tdata = self.data[target]
        out = None
        if out_dir is not None:
            out = Path(out_dir) / setup.value / target
            out.mkdir(parents=True, exist_ok=True)
        timing: dict[str, float] = {}
        result_kwargs: dict = {}

        if setup is SetupKind.SNAIVE:
            test_days = tdata.windows(168, "test")
            pred = np.stack([snaive_forecast(tdata.series, t) for t in test_days.anchors])
            actual, anchors = test_days.targets, test_days.anchors
        else:
            role = f"{setup.value}/{target}"
            if setup is SetupKind.BASELINE:
                t0 = time.perf_counter()
                best, study, _ = _study([tdata], st, derive_seed(st.master_seed, role + "/hpo"),
                                        None if out is None else out / "study.csv")
                ens = train_ensemble(best.hparams, tdata, st.ensemble_size, st.master_seed, st,
                                     role=role + "/member")
                timing["baseline_minutes"] = (time.perf_counter() - t0) / 60.0
                result_kwargs["study"] = study
            else:
                src, src_minutes = self.source_model(plan.source_countries,
                                                     None if out is None else out / "study.csv")
                timing["source_minutes"] = src_minutes
                t0 = time.perf_counter()
                ens = train_ensemble(src.hparams, tdata, st.ensemble_size, st.master_seed, st,
                                     role=role + "/member", init=src.members)
                timing["target_minutes"] = (time.perf_counter() - t0) / 60.0
                result_kwargs["source"] = src
                if out is not None:
                    save_model(src.model, out / "source_model.txt")
                    for j, m in enumerate(src.extra, start=1):
                        save_model(m, out / f"source_model_{j:02d}.txt")
            plan = replace(plan, hparams=ens.hparams)
            ws = tdata.windows(ens.hparams.lookback, "test")
            actual, anchors = ws.targets, ws.anchors
            pred = ensemble_predict(ens, ws.inputs)
            result_kwargs["ensemble"] = ens
            result_kwargs["epochs"] = [h.stopped_epoch for h in ens.histories]
            if out is not None:
                for i, m in enumerate(ens.members):
                    save_model(m, out / f"member_{i:02d}.txt")
                _write_histories(ens.histories, out / "history.csv")

        frame = _forecast_frame(anchors, actual, pred)
        score = evaluation.mape(actual, pred)
        result = ExperimentResult(plan, score, frame, timing, **result_kwargs)
        if out is not None:
            write_forecasts(frame, out / "forecast.csv")
            (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
            (out / "metrics.json").write_text(json.dumps(
                {"mape": score, "epochs": result.epochs}, indent=2) + "\n")
            (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
        log.info("%s %s: MAPE %.3f%% %s", setup.label, target, score, timing)
        return result


def _write_histories(histories: Sequence[History], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member", "epoch", "train_loss", "val_loss", "best_epoch"])
        for i, h in enumerate(histories):
            for e, (tl, vl) in enumerate(zip(h.train_loss, h.val_loss)):
                w.writerow([i, e, "" if np.isnan(tl) else repr(tl), repr(vl), h.best_epoch])


def results_table(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    return pd.DataFrame({"country": [r.plan.target for r in results],
                         "setup": [r.plan.setup.label for r in results],
                         "mape": [r.mape for r in results]})
