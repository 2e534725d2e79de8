"""Day-ahead national load forecasting with cross-country transfer learning."""

from .data import (CountryMeta, Dataset, LoadSeries, ProfileFamily, SplitSpec, parse_load_csv,
                   split_series, synthesize_dataset, two_family_presets, write_load_csv)
from .evaluation import mape
from .experiments import ExperimentSettings, Runner, SetupKind
from .profiling import cluster_countries, compute_profiles, cut_clusters, ward_dendrogram
from .wrangling import ImputationParams, wrangle

__version__ = "0.1.0"
