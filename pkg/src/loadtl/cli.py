"""Command-line pipeline: ingest -> profile -> cluster -> tune/experiment -> report.

Every stage reads the previous stage's files under ``output_dir`` and writes
its own sub-directory together with a copy of the resolved configuration
and a ``timing.json``.

Exit codes: 0 ok, 2 configuration error, 3 data error or missing artifact,
4 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd

from . import evaluation
from .config import ConfigError, PipelineConfig, from_dict, load_config
from .data import (CountryMeta, DataError, Dataset, load_dataset, read_manifest, write_load_csv,
                   write_manifest)
from .experiments import ExperimentError, Runner, SetupKind
from .hpo import StudyFailed
from .nn import DivergenceError
from .profiling import (build_profile_vector, compute_profiles, cut_clusters, read_assignment,
                        ward_dendrogram, write_assignment, write_dendrogram, write_profiles)
from .wrangling import wrangle, write_log

log = logging.getLogger("loadtl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

# Counts observed on the 27-country 2015-2021 ENTSO-E export; informational only.
REFERENCE_OUTLIERS = 233
REFERENCE_IMPUTED = 13_290


class MissingArtifact(DataError):
    def __init__(self, what: str, path: Path):
        super().__init__(f"missing {what}: {path} (run the producing stage first)")
        self.path = path


def _stage_dir(cfg: PipelineConfig, name: str) -> Path:
    d = Path(cfg.output_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    cfg.write(d / "config.yaml")
    return d


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(what, path)
    return path


def _write_timing(d: Path, timing: dict) -> None:
    (d / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")


def _clean_dataset(cfg: PipelineConfig) -> Dataset:
    manifest = _require(Path(cfg.output_dir) / "ingest" / "manifest.csv", "cleaned data (ingest)")
    return load_dataset(manifest, cfg.resolved_splits(), local=True)


# ---------------------------------------------------------------------------
# Stages


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    t0 = time.perf_counter()
    out = _stage_dir(cfg, "ingest")
    if cfg.synthetic is not None:
        ds = cfg.synthetic.build()
        entries = []
        for code, s in ds.series.items():
            rel = Path("raw") / f"{code}.csv"
            write_load_csv(s, out / rel)
            entries.append((ds.meta[code], rel))
        with open(out / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["country", "family"])
            w.writerows(ds.labels.items())
        write_manifest(entries, out / "raw_manifest.csv")
        ds = load_dataset(out / "raw_manifest.csv", cfg.resolved_splits())
    else:
        ds = load_dataset(cfg.manifest, cfg.resolved_splits())

    clean_entries = []
    summary_rows = []
    for code, series in ds.series.items():
        cleaned, summary = wrangle(series, cfg.outlier_multiplier, cfg.imputation)
        p = out / "clean" / f"{code}.csv"
        write_load_csv(cleaned, p)
        write_log(summary.log_rows, out / "logs" / f"{code}_wrangling.csv")
        meta = ds.meta[code]
        clean_entries.append((CountryMeta(code, meta.display_name, meta.timezone_id), Path("clean") / f"{code}.csv"))
        summary_rows.append([code, summary.duplicates_dropped, summary.n_outliers, summary.imputed])
    write_manifest(clean_entries, out / "manifest.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "duplicates_dropped", "outliers_removed", "imputed"])
        w.writerows(summary_rows)
    n_out = sum(r[2] for r in summary_rows)
    n_imp = sum(r[3] for r in summary_rows)
    log.info("ingest: %d countries, %d outliers removed, %d points imputed", len(summary_rows), n_out, n_imp)
    log.info("reference counts for the 27-country 2015-2021 export: %d outliers, %d imputed "
             "(informational; this run: %d / %d)", REFERENCE_OUTLIERS, REFERENCE_IMPUTED, n_out, n_imp)
    _write_timing(out, {"ingest_seconds": time.perf_counter() - t0})
    return EXIT_OK


def cmd_profile(cfg: PipelineConfig, args) -> int:
    t0 = time.perf_counter()
    ds = _clean_dataset(cfg)
    out = _stage_dir(cfg, "profile")
    profiles = {code: compute_profiles(s) for code, s in ds.series.items()}
    write_profiles(profiles, out)
    _write_timing(out, {"profile_seconds": time.perf_counter() - t0})
    return EXIT_OK


def cmd_cluster(cfg: PipelineConfig, args) -> int:
    t0 = time.perf_counter()
    ds = _clean_dataset(cfg)
    out = _stage_dir(cfg, "cluster")
    k = args.k or cfg.k
    vectors = [build_profile_vector(compute_profiles(s), code) for code, s in ds.series.items()]
    dendro = ward_dendrogram(vectors)
    assignment = cut_clusters(dendro, k)
    write_dendrogram(dendro, out / "dendrogram.csv")
    write_assignment(assignment, out / "assignment.csv")
    with open(out / "vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country"] + [f"c{i:02d}" for i in range(len(vectors[0].components))])
        for v in vectors:
            w.writerow([v.country_code] + [repr(float(x)) for x in v.components])
    log.info("cluster: k=%d %s", k, dict(assignment.mapping))
    _write_timing(out, {"cluster_seconds": time.perf_counter() - t0})
    return EXIT_OK


def _clusters_if_any(cfg: PipelineConfig, required: bool):
    path = Path(cfg.output_dir) / "cluster" / "assignment.csv"
    if required:
        _require(path, "cluster assignment (cluster)")
    return read_assignment(path) if path.exists() else None


def cmd_tune(cfg: PipelineConfig, args) -> int:
    """Standalone study over a pooled set of countries."""
    t0 = time.perf_counter()
    ds = _clean_dataset(cfg)
    codes = args.countries.split(",") if args.countries else list(ds.series)
    unknown = [c for c in codes if c not in ds.series]
    if unknown:
        raise ConfigError(f"unknown countries {unknown}")
    scope = "-".join(codes)
    out = _stage_dir(cfg, f"tune/{scope}")
    runner = Runner({c: ds.series[c] for c in codes}, ds.splits, cfg.settings())
    src, _ = runner.source_model(tuple(codes), out / "study.csv")
    hp = src.hparams
    (out / "best.json").write_text(json.dumps(
        {"val_mape": src.val_mape, "layer_sizes": list(hp.layer_sizes), "lookback": hp.lookback,
         "learning_rate": hp.learning_rate, "batch_size": hp.batch_size}, indent=2) + "\n")
    _write_timing(out, {"tune_seconds": time.perf_counter() - t0})
    return EXIT_OK


def _experiment_job(job):
    series, splits, settings, clusters, setups, target, out_dir = job
    runner = Runner(series, splits, settings, clusters)
    rows = []
    for setup in setups:
        r = runner.run(setup, target, out_dir)
        rows.append((setup.value, target, r.mape, r.timing))
    return rows


def cmd_experiment(cfg: PipelineConfig, args) -> int:
    t0 = time.perf_counter()
    ds = _clean_dataset(cfg)
    setups = list(SetupKind) if args.setup == "all" else [SetupKind(args.setup)]
    clusters = _clusters_if_any(cfg, required=SetupKind.CBO in setups)
    targets = list(ds.series) if args.target in (None, "all") else args.target.split(",")
    for t in targets:
        if t not in ds.series:
            raise ConfigError(f"unknown target {t}")
    out = _stage_dir(cfg, "experiments")
    settings = cfg.settings()
    series = dict(ds.series)
    jobs = [(series, ds.splits, settings, clusters, setups, t, out) for t in targets]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = [row for rows in pool.map(_experiment_job, jobs) for row in rows]
    else:
        # one runner so source models are shared between targets with equal pools
        runner = Runner(series, ds.splits, settings, clusters)
        results = []
        for t in targets:
            for setup in setups:
                r = runner.run(setup, t, out)
                results.append((setup.value, t, r.mape, r.timing))
    with open(out / f"timing_{args.setup}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "setup", "source_minutes", "target_minutes", "baseline_minutes"])
        for setup, t, _, timing in results:
            w.writerow([t, setup] + [timing.get(k, "") for k in
                                     ("source_minutes", "target_minutes", "baseline_minutes")])
    for setup, t, score, _ in results:
        log.info("%s %s MAPE %.4f%%", setup, t, score)
    _write_timing(out, {"experiment_seconds": time.perf_counter() - t0})
    return EXIT_OK


def collect_results(exp_dir: Path, countries, setups=SetupKind) -> pd.DataFrame:
    """Long ``country, setup, mape`` rows; baseline must exist for every country,
    other setups are included only when present for all of them."""
    rows = []
    for setup in setups:
        paths = {c: exp_dir / setup.value / c / "metrics.json" for c in countries}
        missing = [c for c, p in paths.items() if not p.exists()]
        if missing and (setup is SetupKind.BASELINE or len(missing) < len(countries)):
            raise MissingArtifact(f"{setup.label} experiment for {', '.join(missing)}",
                                  paths[missing[0]])
        if missing:
            continue
        for c, p in paths.items():
            rows.append((c, setup.label, json.loads(p.read_text())["mape"]))
    return pd.DataFrame(rows, columns=["country", "setup", "mape"])


def cmd_report(cfg: PipelineConfig, args) -> int:
    t0 = time.perf_counter()
    manifest = _require(Path(cfg.output_dir) / "ingest" / "manifest.csv", "cleaned data (ingest)")
    countries = [m.code for m, _ in read_manifest(manifest)]
    rows = collect_results(Path(cfg.output_dir) / "experiments", countries)
    clusters = _clusters_if_any(cfg, required=False)
    out = _stage_dir(cfg, "report")
    table = evaluation.comparison_table(rows, None if clusters is None else clusters.mapping)
    evaluation.write_report(table, out)
    if args.svg:
        evaluation.bar_svg(table[[c for c in evaluation.SETUPS if c in table.columns]], out / "country_bars.svg")
    log.info("report:\n%s", table.to_string())
    _write_timing(out, {"report_seconds": time.perf_counter() - t0})
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "profile": cmd_profile, "cluster": cmd_cluster, "tune": cmd_tune,
            "experiment": cmd_experiment, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loadtl", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="YAML pipeline config")
    common.add_argument("--desk-scale", action="store_true",
                        help="10 HPO trials, ensemble of 5, reduced search space, synthetic data by default")
    common.add_argument("-o", "--output-dir", type=Path, help="override output_dir")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse and wrangle raw CSVs")
    sub.add_parser("profile", parents=[common], help="daily/weekly/yearly profile CSVs")
    sp = sub.add_parser("cluster", parents=[common], help="Ward dendrogram and cluster assignment")
    sp.add_argument("-k", type=int, help="cluster count (default from config)")
    sp = sub.add_parser("tune", parents=[common], help="hyperparameter study on pooled countries")
    sp.add_argument("--countries", help="comma-separated codes (default: all)")
    sp = sub.add_parser("experiment", parents=[common], help="run forecasting setups")
    sp.add_argument("--setup", default="all", choices=["all"] + [s.value for s in SetupKind])
    sp.add_argument("--target", help="comma-separated target codes or 'all' (default)")
    sp = sub.add_parser("report", parents=[common], help="comparison tables and plot data")
    sp.add_argument("--svg", action="store_true", help="also emit a bar chart SVG")
    return p


def resolve_config(args) -> PipelineConfig:
    if args.config is not None:
        cfg = load_config(args.config, desk_scale=args.desk_scale)
    elif args.desk_scale and args.output_dir is not None:
        cfg = from_dict({"output_dir": str(args.output_dir)}, desk_scale=True)
    else:
        raise ConfigError("--config is required (or --desk-scale with --output-dir)")
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, args)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
        return code
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ExperimentError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (DivergenceError, StudyFailed) as exc:
        log.error("training failure: %s", exc)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
