"""Transfer learning for a data-poor forecasting target.

Pre-trains a day-ahead MLP on the other members of the target's cluster
(Cluster-but-One), warm-starts the target model from it and fine-tunes. The
same target is also trained from scratch (Baseline) and forecast with the
one-week seasonal naive rule. Budgets are tiny so this finishes in about a
minute; the `loadtl` CLI runs the full protocol.

    $ python demos/03_transfer.py
"""
from dataclasses import replace

import numpy as np

from loadtl.data import synthesize_dataset, two_family_presets
from loadtl.experiments import ExperimentSettings, Runner, SetupKind
from loadtl.hpo import SearchSpace
from loadtl.profiling import cluster_countries


def main():
    ds = synthesize_dataset(seed=3, families=two_family_presets(), countries_per_family=3, years=3)
    _, _, clusters = cluster_countries(ds.series, k=2)
    target = "AA"
    print(f"target {target}: cluster {clusters.cluster_of(target)} = {clusters.members(clusters.cluster_of(target))}")

    settings = replace(ExperimentSettings.desk(master_seed=0), n_trials=4, ensemble_size=3,
                       space=SearchSpace(num_layers=(2,), layer_sizes=(64, 128), lookbacks=(168, 336),
                                         lr_range=(3e-4, 3e-3), batch_sizes=(64,)))
    runner = Runner(ds.series, ds.splits, settings, clusters)

    print("\nsetup        test MAPE   stopped epochs per member")
    for setup in (SetupKind.SNAIVE, SetupKind.BASELINE, SetupKind.CBO, SetupKind.ABO):
        r = runner.run(setup, target)
        epochs = " ".join(str(e) for e in r.epochs) or "-"
        print(f"  {setup.value:<10} {r.mape:>8.3f}%   {epochs}")
        if setup is SetupKind.CBO:
            cbo_epochs = np.mean(r.epochs)
            print(f"             source pool {r.plan.source_countries}, "
                  f"architecture {r.source.hparams.layer_sizes} lookback {r.source.hparams.lookback}")
        if setup is SetupKind.BASELINE:
            base_epochs = np.mean(r.epochs)
    print(f"\nwarm-started fine-tuning stopped after {cbo_epochs:.1f} epochs on average "
          f"vs {base_epochs:.1f} from scratch")


if __name__ == "__main__":
    main()
