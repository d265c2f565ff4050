"""Python access to the aquarius simulator core."""

from aquarius._core import (
    ConfigError,
    InvariantViolation,
    LinearEstimator,
    NormalizationStats,
    NUM_FEATURES,
    __version__,
    bench,
    compute_stats,
    dataset_columns,
    default_config,
    drop_outliers,
    feature_names,
    jain_fairness,
    load_coefficients,
    maglev_table,
    nearest_rank,
    overprovision,
    read_dataset,
    run_experiment,
    spearman,
    standardize,
    weights_from_predictions,
    window_ranges,
)


def write_coefficients(path, names, coefficients, bias):
    """Writes a name,value coefficients file readable by load_coefficients."""
    with open(path, "w", encoding="ascii") as f:
        f.write("name,value\n")
        f.write(f"__bias__,{float(bias)!r}\n")
        for name, value in zip(names, coefficients):
            f.write(f"{name},{float(value)!r}\n")


__all__ = [
    "ConfigError",
    "InvariantViolation",
    "LinearEstimator",
    "NormalizationStats",
    "NUM_FEATURES",
    "__version__",
    "bench",
    "compute_stats",
    "dataset_columns",
    "default_config",
    "drop_outliers",
    "feature_names",
    "jain_fairness",
    "load_coefficients",
    "maglev_table",
    "nearest_rank",
    "overprovision",
    "read_dataset",
    "run_experiment",
    "spearman",
    "standardize",
    "weights_from_predictions",
    "window_ranges",
    "write_coefficients",
]
