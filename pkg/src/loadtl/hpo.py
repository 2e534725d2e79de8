"""Tree-structured Parzen estimator search with successive-halving pruning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .nn import DivergenceError, Hyperparameters
from .seeds import derive_seed

log = logging.getLogger(__name__)


class TrialPruned(Exception):
    """Raised from a rung report to stop an unpromising trial."""


class StudyFailed(RuntimeError):
    def __init__(self, message: str, trials: list["Trial"]):
        super().__init__(message)
        self.trials = trials


@dataclass(frozen=True)
class SearchSpace:
    num_layers: tuple[int, ...] = (2, 3, 4, 5, 6)
    layer_sizes: tuple[int, ...] = (128, 256, 512, 1024, 2048)
    lookbacks: tuple[int, ...] = (168, 336, 504, 672)
    lr_range: tuple[float, float] = (1e-5, 1e-4)
    batch_sizes: tuple[int, ...] = (256, 512, 1024)
    horizon: int = 24

    def __post_init__(self):
        for name in ("num_layers", "layer_sizes", "lookbacks", "batch_sizes"):
            if not getattr(self, name):
                raise ValueError(f"empty search dimension {name}")
        lo, hi = self.lr_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid learning-rate range {self.lr_range}")

    @classmethod
    def desk(cls) -> "SearchSpace":
        """Reduced space for laptop-scale runs on a few years of data."""
        return cls(num_layers=(2, 3), layer_sizes=(32, 64, 128), lookbacks=(168, 336),
                   lr_range=(3e-4, 3e-3), batch_sizes=(16, 32))

    @property
    def max_layers(self) -> int:
        return max(self.num_layers)

    def contains(self, hp: Hyperparameters) -> bool:
        lo, hi = self.lr_range
        return (hp.num_layers in self.num_layers
                and all(s in self.layer_sizes for s in hp.layer_sizes)
                and hp.lookback in self.lookbacks
                and hp.batch_size in self.batch_sizes
                and hp.horizon == self.horizon
                and lo <= hp.learning_rate <= hi)

    def categorical_dims(self) -> dict[str, tuple[int, ...]]:
        dims = {"num_layers": self.num_layers, "lookback": self.lookbacks, "batch_size": self.batch_sizes}
        for i in range(self.max_layers):
            dims[f"size_{i}"] = self.layer_sizes
        return dims


def encode(hp: Hyperparameters) -> dict[str, float]:
    d = {"num_layers": hp.num_layers, "lookback": hp.lookback, "batch_size": hp.batch_size,
         "log_lr": math.log(hp.learning_rate)}
    for i, s in enumerate(hp.layer_sizes):
        d[f"size_{i}"] = s
    return d


def decode(d: dict, space: SearchSpace) -> Hyperparameters:
    nl = int(d["num_layers"])
    lo, hi = space.lr_range
    lr = min(max(math.exp(d["log_lr"]), lo), hi)
    return Hyperparameters(layer_sizes=tuple(int(d[f"size_{i}"]) for i in range(nl)),
                           lookback=int(d["lookback"]), learning_rate=lr,
                           batch_size=int(d["batch_size"]), horizon=space.horizon)


@dataclass
class Trial:
    id: int
    hparams: Hyperparameters
    seed: int
    status: str = "running"     # running | pruned | complete | diverged
    objective: float = math.nan
    rungs: dict[int, float] = field(default_factory=dict)
    pruned_at: int | None = None


@dataclass
class StudyState:
    rng: np.random.Generator
    gamma: float = 0.25
    n_candidates: int = 24
    n_startup: int = 10
    rungs: tuple[int, ...] = (5, 15, 45)
    eta: int = 3
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.n_startup < 2:
            raise ValueError("n_startup must be >= 2")
        if self.eta < 2:
            raise ValueError("eta must be >= 2")

    @property
    def completed(self) -> list[Trial]:
        return [t for t in self.trials if t.status == "complete"]


# ---------------------------------------------------------------------------
# Sampling


def random_suggest(rng: np.random.Generator, space: SearchSpace) -> Hyperparameters:
    """Uniform over the discrete sets, log-uniform learning rate."""
    nl = int(rng.choice(space.num_layers))
    sizes = tuple(int(rng.choice(space.layer_sizes)) for _ in range(nl))
    lo, hi = space.lr_range
    lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return Hyperparameters(layer_sizes=sizes, lookback=int(rng.choice(space.lookbacks)),
                           learning_rate=lr, batch_size=int(rng.choice(space.batch_sizes)),
                           horizon=space.horizon)


class _Categorical:
    """Observed frequencies with add-one (Laplace) smoothing."""

    def __init__(self, choices, observed):
        self.choices = tuple(choices)
        counts = np.array([sum(1 for o in observed if o == c) for c in self.choices], dtype=float)
        self.p = (counts + 1.0) / (counts.sum() + len(self.choices))

    def sample(self, rng):
        return self.choices[int(rng.choice(len(self.choices), p=self.p))]

    def log_pdf(self, x):
        return math.log(self.p[self.choices.index(x)])


class _Parzen:
    """Truncated Gaussian kernels on ``[lo, hi]`` plus a uniform prior component.

    Bandwidth follows Scott's rule ``1.06 * std * n^(-1/5)``, clipped to
    ``[0.01, 1] * (hi - lo)``; with fewer than two distinct points the full
    range is used.
    """

    def __init__(self, lo, hi, observed):
        self.lo, self.hi = lo, hi
        self.mu = np.asarray(observed, dtype=float)
        width = hi - lo
        n = len(self.mu)
        if n >= 2 and np.std(self.mu) > 0:
            bw = 1.06 * np.std(self.mu) * n ** (-0.2)
        else:
            bw = width
        self.sigma = float(np.clip(bw, 0.01 * width, width)) if width > 0 else 1.0
        self.weights = np.full(n + 1, 1.0 / (n + 1))   # last entry is the prior
        if n:
            self.mass = ndtr((hi - self.mu) / self.sigma) - ndtr((lo - self.mu) / self.sigma)

    def sample(self, rng):
        if self.hi == self.lo:
            return self.lo
        k = int(rng.choice(len(self.weights), p=self.weights))
        if k == len(self.mu):
            return float(rng.uniform(self.lo, self.hi))
        while True:
            x = rng.normal(self.mu[k], self.sigma)
            if self.lo <= x <= self.hi:
                return float(x)

    def log_pdf(self, x):
        width = self.hi - self.lo
        if width == 0:
            return 0.0
        dens = self.weights[-1] / width
        if len(self.mu):
            z = (x - self.mu) / self.sigma
            k = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma * self.mass)
            dens += float(np.dot(self.weights[:-1], k))
        return math.log(dens)


def _estimators(space: SearchSpace, encoded: list[dict]):
    est = {}
    for name, choices in space.categorical_dims().items():
        est[name] = _Categorical(choices, [e[name] for e in encoded if name in e])
    lo, hi = space.lr_range
    est["log_lr"] = _Parzen(math.log(lo), math.log(hi), [e["log_lr"] for e in encoded])
    return est


def _active(d: dict) -> list[str]:
    return ["num_layers", "lookback", "batch_size", "log_lr"] + [f"size_{i}" for i in range(int(d["num_layers"]))]


def tpe_suggest(state: StudyState, space: SearchSpace) -> Hyperparameters:
    """Next configuration to evaluate.

    During start-up, or when every completed objective is identical, sample
    uniformly. Otherwise split observations at the ``gamma`` quantile into a
    good and a bad group (pruned trials are always bad), fit per-dimension
    densities to each, draw ``n_candidates`` from the good densities and
    return the one with the largest good/bad likelihood ratio.
    """
    rng = state.rng
    done = state.completed
    if len(done) < state.n_startup:
        return random_suggest(rng, space)
    objs = np.array([t.objective for t in done])
    if np.ptp(objs) == 0 and not any(t.status == "pruned" for t in state.trials):
        return random_suggest(rng, space)
    ranked = sorted(done, key=lambda t: (t.objective, t.id))
    n_good = max(1, math.ceil(state.gamma * len(ranked)))
    good = ranked[:n_good]
    bad = ranked[n_good:] + [t for t in state.trials if t.status == "pruned"]
    if not bad:
        return random_suggest(rng, space)
    good_est = _estimators(space, [encode(t.hparams) for t in good])
    bad_est = _estimators(space, [encode(t.hparams) for t in bad])

    best, best_score = None, -math.inf
    for _ in range(state.n_candidates):
        cand = {"num_layers": good_est["num_layers"].sample(rng)}
        for i in range(int(cand["num_layers"])):
            cand[f"size_{i}"] = good_est[f"size_{i}"].sample(rng)
        cand["lookback"] = good_est["lookback"].sample(rng)
        cand["batch_size"] = good_est["batch_size"].sample(rng)
        cand["log_lr"] = good_est["log_lr"].sample(rng)
        score = sum(good_est[k].log_pdf(cand[k]) - bad_est[k].log_pdf(cand[k]) for k in _active(cand))
        if score > best_score:
            best, best_score = cand, score
    return decode(best, space)


# ---------------------------------------------------------------------------
# Pruning


def should_prune(trial: Trial, state: StudyState, rung: int) -> bool:
    """True when the trial's loss at ``rung`` is outside the best ``1/eta``
    fraction of every trial that reported at that rung."""
    own = trial.rungs[rung]
    others = [t.rungs[rung] for t in state.trials if t is not trial and rung in t.rungs]
    n = len(others) + 1
    if n < state.eta:
        return False
    keep = max(1, n // state.eta)
    rank = sum(1 for x in others if x < own)
    return rank >= keep


# ---------------------------------------------------------------------------
# Study

Evaluator = Callable[[Hyperparameters, int, Callable[[int, float], None]], float]


def run_study(evaluator: Evaluator, space: SearchSpace, n_trials: int, seed: int,
              log_path: str | Path | None = None, **state_kwargs) -> tuple[Trial, StudyState]:
    """Sequentially suggest, evaluate and prune ``n_trials`` configurations.

    ``evaluator(hparams, seed, report)`` must return the validation MAPE and
    call ``report(epoch, val_loss)`` after each epoch; ``report`` raises
    :class:`TrialPruned` when the trial should stop.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    state = StudyState(rng=np.random.default_rng(derive_seed(seed, "tpe")), **state_kwargs)
    for i in range(n_trials):
        trial = Trial(i, tpe_suggest(state, space), derive_seed(seed, "trial", i))
        state.trials.append(trial)

        def report(epoch: int, loss: float, trial=trial) -> None:
            if epoch in state.rungs:
                trial.rungs[epoch] = loss
                if should_prune(trial, state, epoch):
                    raise TrialPruned(epoch)

        try:
            value = float(evaluator(trial.hparams, trial.seed, report))
        except TrialPruned as exc:
            trial.status, trial.pruned_at = "pruned", exc.args[0]
        except DivergenceError:
            trial.status = "diverged"
        else:
            if math.isfinite(value):
                trial.status, trial.objective = "complete", value
            else:
                trial.status = "diverged"
        log.debug("trial %d %s %s objective=%s", i, trial.status, trial.hparams, trial.objective)

    if log_path is not None:
        write_study_log(state, log_path)
    done = state.completed
    if not done:
        raise StudyFailed("every trial was pruned or diverged", state.trials)
    best = min(done, key=lambda t: (t.objective, t.id))
    return best, state


def write_study_log(state: StudyState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_id", "status", "num_layers", "layer_sizes", "lookback", "lr", "batch",
                    "objective_mape"] + [f"rung_{r}" for r in state.rungs])
        for t in state.trials:
            hp = t.hparams
            w.writerow([t.id, t.status, hp.num_layers, "-".join(map(str, hp.layer_sizes)), hp.lookback,
                        repr(hp.learning_rate), hp.batch_size,
                        "" if math.isnan(t.objective) else repr(t.objective)]
                       + [repr(t.rungs[r]) if r in t.rungs else "" for r in state.rungs])
