"""Acceptance gate: one PASS/FAIL line per criterion (see the terminal summary).

Criteria 7 and 8 run the desk-scale pipeline twice end to end (a few minutes).
Criterion 9 needs the real hourly-demand export; point LOADTL_REAL_MANIFEST at
its manifest CSV to enable it.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from loadtl.cli import REFERENCE_IMPUTED, REFERENCE_OUTLIERS, main
from loadtl.data import LoadSeries, synthesize_dataset, two_family_presets
from loadtl.evaluation import ABO, CBO, SETUPS, comparison_table, improvement_table, mape, summarize
from loadtl.experiments import snaive_forecast, warm_start
from loadtl.nn import Hyperparameters, forward, gradients, init_model, mse
from loadtl.profiling import build_profile_vector, cluster_countries, compute_profiles, ward_linkage
from loadtl.wrangling import blend

from conftest import local_series, record_verdict
from oracles import brute_force_ward, finite_difference_grads, mape_oracle

FIXTURES = Path(__file__).parent / "fixtures"
TOL6 = 0.005 + 1e-9          # printed values carry two decimals; 1e-9 absorbs binary rounding at the boundary


# --- 1. formula oracles ------------------------------------------------------

def test_criterion_1_formula_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    d = rng.integers(1, 200, 1000)
    L, H = rng.uniform(1, 1e4, 1000), rng.uniform(1, 1e4, 1000)
    mine = blend(d, L, H, a=0.3)
    oracle = np.array([math.exp(-0.3 * di) * li + (1 - math.exp(-0.3 * di)) * hi for di, li, hi in zip(d, L, H)])
    blend_err = float(np.max(np.abs(mine - oracle) / np.abs(oracle)))

    y, f = rng.uniform(100, 1e4, 5000), rng.uniform(100, 1e4, 5000)
    mape_err = abs(mape(y, f) - mape_oracle(y, f))

    v = rng.uniform(100, 200, 24 * 21)
    s = local_series(v, start="2021-01-04")
    snaive_exact = all(
        np.array_equal(snaive_forecast(s, pd.Timestamp("2021-01-04") + pd.Timedelta(days=k)),
                       v[24 * k - 168:24 * k - 144])
        for k in range(7, 21))
    runtime = time.perf_counter() - t0
    ok = blend_err <= 1e-12 and mape_err <= 1e-12 and snaive_exact and runtime < 1.0
    record_verdict(1, ok, f"blend rel err {blend_err:.1e}, MAPE err {mape_err:.1e}, sNaive exact={snaive_exact}, "
                          f"{runtime:.2f} s")
    assert ok


# --- 2. gradient check -------------------------------------------------------

def test_criterion_2_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(100 + i)
        sizes = tuple(int(w) for w in rng.integers(2, 17, int(rng.integers(1, 4))))   # 1-3 hidden, width <= 16
        lookback, horizon = int(rng.integers(2, 17)), int(rng.integers(1, 17))
        activation = ("relu", "tanh", "sigmoid")[i % 3]
        hp = Hyperparameters(sizes, lookback=lookback, horizon=horizon)
        m = init_model(hp, seed=i, activation=activation)
        for b in m.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        X, Y = rng.normal(size=(6, lookback)), rng.normal(size=(6, horizon))
        grads, _ = gradients(m, X, Y)
        fd = finite_difference_grads(lambda: mse(m, X, Y), m.params())
        for g, f in zip(grads, fd):
            # relative error per component; the floor keeps ~0 components from dividing by noise
            rel = np.abs(g - f) / np.maximum(np.maximum(np.abs(g), np.abs(f)), 1e-6)
            worst = max(worst, float(rel.max()))
    runtime = time.perf_counter() - t0
    ok = worst <= 1e-4 and runtime < 30
    record_verdict(2, ok, f"worst relative error {worst:.1e} over 50 MLPs, {runtime:.1f} s")
    assert ok


# --- 3. Ward vs brute force --------------------------------------------------

def test_criterion_3_ward_brute_force():
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(100):
        rng = np.random.default_rng(i)
        n = int(rng.integers(2, 9))
        X = rng.normal(size=(n, int(rng.integers(1, 6))))
        mine = [(min(m.a, m.b), max(m.a, m.b), m.size) for m in ward_linkage(X)]
        oracle = [(min(a, b), max(a, b), s) for a, b, _, s in brute_force_ward(X)]
        mismatches += mine != oracle
    runtime = time.perf_counter() - t0
    ok = mismatches == 0 and runtime < 10
    record_verdict(3, ok, f"{100 - mismatches}/100 merge sequences identical, {runtime:.2f} s")
    assert ok


# --- 4. scale invariance -----------------------------------------------------

def scaled(s: LoadSeries, c: float) -> LoadSeries:
    return LoadSeries(s.country_code, s.timezone_id, s.start, s.values * c, s.missing_mask.copy(), local=s.local)


def test_criterion_4_scale_invariance():
    ds = synthesize_dataset(11, two_family_presets(), 3, 2)
    base_vecs, _, base_assign = cluster_countries(ds.series, 2)
    base_vec = {v.country_code: v.components for v in base_vecs}
    rng = np.random.default_rng(4)
    target = ds.series["AA"]
    rel = 1 + rng.uniform(-0.1, 0.1, len(target.values))
    base_mape = mape(target.values, target.values * rel)
    worst_vec, worst_mape, same_assign = 0.0, 0.0, True
    for code in ds.series:
        for c in (0.5, 10.0, 1000.0):
            series = dict(ds.series)
            series[code] = scaled(ds.series[code], c)
            vec = build_profile_vector(compute_profiles(series[code]), code).components
            worst_vec = max(worst_vec, float(np.max(np.abs(vec - base_vec[code]))))
            same_assign &= cluster_countries(series, 2)[2] == base_assign
    for c in (0.5, 10.0, 1000.0):
        y = target.values * c
        worst_mape = max(worst_mape, abs(mape(y, y * rel) - base_mape))
    ok = worst_vec <= 1e-12 and worst_mape <= 1e-12 and same_assign
    record_verdict(4, ok, f"profile dev {worst_vec:.1e}, MAPE dev {worst_mape:.1e}, assignments unchanged="
                          f"{same_assign}")
    assert ok


# --- 5. warm-start identity --------------------------------------------------

def test_criterion_5_warm_start_identity():
    hp = Hyperparameters((128, 256), lookback=168, learning_rate=3e-5, batch_size=256)
    src = init_model(hp, seed=5)
    tgt = warm_start(src)
    X = np.random.default_rng(5).normal(size=(100, 168))
    ok = np.array_equal(forward(src, X), forward(tgt, X))
    record_verdict(5, ok, "target output equals source output exactly on 100 windows" if ok else "outputs differ")
    assert ok


# --- 6. published table fixtures ---------------------------------------------

@pytest.fixture(scope="module")
def published():
    df = pd.read_csv(FIXTURES / "published_country_mape.csv")
    rows = df.melt(id_vars=["country", "cluster"], value_vars=list(SETUPS), var_name="setup", value_name="mape")
    table = comparison_table(rows[["country", "setup", "mape"]], dict(zip(df.country, df.cluster)))
    return table


IMPROVEMENT = pd.read_csv(FIXTURES / "published_improvement.csv").set_index("setup").improvement
CLUSTERS = pd.read_csv(FIXTURES / "published_cluster_mape.csv").set_index("cluster")


@pytest.mark.parametrize("setup", [ABO, CBO, "best_TL"])
def test_criterion_6_improvement_row(published, setup):
    got, want = improvement_table(published)[setup], IMPROVEMENT[setup]
    ok = abs(got - want) <= TOL6
    record_verdict(6, ok, f"improvement {setup}: {got:.4f} vs printed {want:.2f}")
    assert ok, f"{setup}: reproduced {got:.4f}, printed {want:.2f}"


@pytest.mark.parametrize("cluster,setup", [(c, s) for c in CLUSTERS.index for s in SETUPS])
def test_criterion_6_cluster_averages(published, cluster, setup):
    got, want = summarize(published).loc[cluster, setup], CLUSTERS.loc[cluster, setup]
    ok = abs(got - want) <= TOL6
    record_verdict(6, ok, f"cluster {cluster} {setup}: {got:.4f} vs printed {want:.2f}")
    assert ok, f"cluster {cluster} {setup}: reproduced {got:.4f}, printed {want:.2f}"


# --- 7 and 8. desk-scale end to end -------------------------------------------

def desk_run(out: Path, seed: int = 0) -> float:
    t0 = time.perf_counter()
    common = ["--desk-scale", "-o", str(out), "--seed", str(seed)]
    for argv in (["ingest"], ["cluster"], ["experiment", "--setup", "all"], ["report"]):
        assert main(argv + common) == 0, argv
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("desk_a"), tmp_path_factory.mktemp("desk_b")
    return (a, desk_run(a)), (b, desk_run(b))


def test_criterion_7_desk_end_to_end(desk_runs):
    (out, runtime), _ = desk_runs
    labels = pd.read_csv(out / "ingest" / "labels.csv")
    assign = pd.read_csv(out / "cluster" / "assignment.csv").merge(labels, on="country")
    recovered = (assign.groupby("cluster").family.nunique().eq(1).all()
                 and assign.groupby("family").cluster.nunique().eq(1).all() and assign.cluster.nunique() == 2)
    exp = out / "experiments"
    countries = sorted(labels.country)

    def metrics(setup, code):
        return json.loads((exp / setup / code / "metrics.json").read_text())

    beats = {c: all(metrics(s, c)["mape"] < metrics("snaive", c)["mape"] for s in ("baseline", "abo", "cbo"))
             for c in countries}
    faster = {c: np.mean(metrics("cbo", c)["epochs"]) < np.mean(metrics("baseline", c)["epochs"])
              for c in countries}
    ok = bool(recovered) and all(beats.values()) and sum(faster.values()) >= 4 and runtime <= 600
    record_verdict(7, ok, f"families recovered={bool(recovered)}, NN beats sNaive on "
                          f"{sum(beats.values())}/6, CbO stops earlier on {sum(faster.values())}/6, "
                          f"{runtime:.0f} s")
    assert recovered, "k=2 clustering did not recover the planted families"
    assert all(beats.values()), beats
    assert sum(faster.values()) >= 4, faster
    assert runtime <= 600


def test_criterion_8_determinism(desk_runs):
    (a, _), (b, _) = desk_runs
    files = sorted(p.relative_to(a) for p in (a / "experiments").rglob("forecast.csv"))
    identical = [(a / f).read_bytes() == (b / f).read_bytes() for f in files]
    ok = len(files) == 24 and all(identical)
    record_verdict(8, ok, f"{sum(identical)}/{len(files)} forecast CSVs byte-identical")
    assert ok


# --- 9. real-data wrangling counts (conditional) -------------------------------

def test_criterion_9_real_data_counts(tmp_path):
    manifest = os.environ.get("LOADTL_REAL_MANIFEST")
    if not manifest or not Path(manifest).exists():
        record_verdict(9, None, "real export not present (set LOADTL_REAL_MANIFEST)")
        pytest.skip("real hourly-demand export not present")
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"output_dir: {tmp_path / 'out'}\ndata:\n  manifest: {Path(manifest).resolve()}\n")
    assert main(["ingest", "-c", str(cfg)]) == 0
    summary = pd.read_csv(tmp_path / "out" / "ingest" / "summary.csv")
    outliers, imputed = int(summary.outliers_removed.sum()), int(summary.imputed.sum())
    record_verdict(9, True, f"reported {outliers} outliers / {imputed} imputed "
                            f"(reference {REFERENCE_OUTLIERS} / {REFERENCE_IMPUTED}, informational)")
