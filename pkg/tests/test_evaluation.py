import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from loadtl.evaluation import (ABO, BASELINE, CBO, SNAIVE, comparison_table, improvement_table, mape, summarize,
                               write_report)

from oracles import mape_oracle


def test_mape_examples():
    assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mape([100, 200], [110, 180]) == pytest.approx(10.0, abs=1e-12)
    assert mape([50], [0]) == 100.0


@pytest.mark.parametrize("y,f", [([0.0, 1.0], [1.0, 1.0]), ([1.0], [1.0, 2.0]), ([], [])])
def test_mape_errors(y, f):
    with pytest.raises(ValueError):
        mape(y, f)


positive = arrays(np.float64, st.integers(1, 50), elements=st.floats(1, 1e5))


@given(positive, st.floats(0.5, 1.5), st.sampled_from([0.5, 10.0, 1000.0]))
def test_mape_scale_invariant(y, ratio, c):
    f = y * ratio
    assert mape(c * y, c * f) == pytest.approx(mape(y, f), abs=1e-12)


@given(positive, st.data())
def test_mape_nonnegative_and_oracle(y, data):
    f = data.draw(arrays(np.float64, len(y), elements=st.floats(0, 1e5)))
    m = mape(y, f)
    assert m >= 0
    assert m == pytest.approx(mape_oracle(y, f), rel=1e-12, abs=1e-12)
    assert (m == 0) == bool(np.all(y == f))


def long_rows(table: dict) -> pd.DataFrame:
    return pd.DataFrame([(c, s, v) for c, row in table.items() for s, v in row.items()],
                        columns=["country", "setup", "mape"])


FIXTURE = {
    "AA": {BASELINE: 3.0, ABO: 2.5, CBO: 2.8, SNAIVE: 5.0},
    "BB": {BASELINE: 2.0, ABO: 2.2, CBO: 1.8, SNAIVE: 4.0},
    "CC": {BASELINE: 4.0, ABO: 3.0, CBO: 3.5, SNAIVE: 6.0},
}
CLUSTERS = {"AA": 1, "BB": 1, "CC": 2}


def test_comparison_table_and_best():
    t = comparison_table(long_rows(FIXTURE), CLUSTERS)
    assert list(t.columns) == ["cluster", BASELINE, ABO, CBO, SNAIVE, "best_setup", "best_mape"]
    assert t.loc["AA", "best_setup"] == ABO and t.loc["BB", "best_setup"] == CBO
    assert t.loc["BB", "best_mape"] == 1.8


def test_improvement_brute_force():
    t = comparison_table(long_rows(FIXTURE))
    imp = improvement_table(t)
    for s in (ABO, CBO, SNAIVE):
        assert imp[s] == pytest.approx(sum(r[BASELINE] - r[s] for r in FIXTURE.values()) / 3, abs=1e-12)
    best = sum(r[BASELINE] - min(r[ABO], r[CBO]) for r in FIXTURE.values()) / 3
    assert imp["best_TL"] == pytest.approx(best, abs=1e-12)


def test_improvement_examples():
    equal = comparison_table(long_rows({"X": {BASELINE: 2.0, ABO: 2.0, CBO: 2.0}}))
    assert improvement_table(equal)[ABO] == 0 and improvement_table(equal)[CBO] == 0
    one = comparison_table(long_rows({"X": {BASELINE: 3.0, ABO: 2.5}}))
    assert improvement_table(one)[ABO] == pytest.approx(0.5)


def test_improvement_requires_baseline():
    with pytest.raises(ValueError):
        improvement_table(comparison_table(long_rows({"X": {ABO: 1.0}})))


def test_summarize_examples():
    t = comparison_table(long_rows(FIXTURE), CLUSTERS)
    s = summarize(t)
    assert s.loc[1, BASELINE] == pytest.approx(2.5)            # mean of 3 and 2
    assert s.loc[2, ABO] == 3.0                                # singleton cluster
    assert s.loc[1, "best_setup"] in (ABO, CBO)
    assert s.loc[2, "best_setup"] == ABO


def test_summarize_missing_rows():
    rows = long_rows(FIXTURE)
    rows = rows[~((rows.country == "BB") & (rows.setup == CBO))]
    with pytest.raises(ValueError, match="BB"):
        summarize(comparison_table(rows, CLUSTERS))


def test_summarize_requires_clusters():
    with pytest.raises(ValueError):
        summarize(comparison_table(long_rows(FIXTURE)))


def test_write_report(tmp_path):
    t = comparison_table(long_rows(FIXTURE), CLUSTERS)
    paths = write_report(t, tmp_path)
    countries = pd.read_csv(paths["table_countries"], index_col="country")
    assert countries.loc["Average Improvement", ABO] == pytest.approx(improvement_table(t)[ABO])
    assert countries.loc["Average Improvement", "best_setup"] == "TL"
    clusters = pd.read_csv(paths["table_clusters"], index_col="cluster")
    assert list(clusters.index) == [1, 2]
    bars = pd.read_csv(paths["plot_countries"])
    assert list(bars.columns) == ["country", "setup", "mape"] and len(bars) == 12
    assert len(pd.read_csv(paths["plot_clusters"])) == 8
