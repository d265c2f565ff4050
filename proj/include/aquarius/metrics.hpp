#pragma once

#include <cstdint>
#include <span>

namespace aquarius {

/// (sum x)^2 / (n * sum x^2); 1.0 for an all-zero load vector.
double jain_fairness(std::span<const double> values);

/// max / mean; 1.0 when the mean is zero.
double overprovision(std::span<const double> values);

struct FctStats {
    double mean = 0.0;
    double p90 = 0.0;
    double p99 = 0.0;
    std::uint64_t count = 0;
};

/// Mean and nearest-rank percentiles; all zero for an empty sample.
FctStats fct_stats(std::span<const double> fcts);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace aquarius
