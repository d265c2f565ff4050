// From published frames to model-ready rows: five scalar reductions per
// sampled channel, standardization, outlier dropping, sequence windowing and
// the CSV dataset format.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aquarius/cluster_sim.hpp"
#include "aquarius/features.hpp"
#include "aquarius/telemetry.hpp"

namespace aquarius {

inline constexpr double kDecayBeta = 0.9;
inline constexpr double kStdEpsilon = 1e-12;

struct ChannelReduction {
    double avg = 0.0;
    double p90 = 0.0;
    double std = 0.0;
    double decay_avg = 0.0;
    double decay_p90 = 0.0;

    friend bool operator==(const ChannelReduction&, const ChannelReduction&) = default;
};

/// 0-based nearest-rank index ceil(q * n) - 1, clamped to [0, n - 1].
std::size_t nearest_rank_index(double q, std::size_t n);
/// Nearest-rank q-quantile of unsorted values (n >= 1).
double nearest_rank(std::span<const double> values, double q);

/// avg, nearest-rank p90 and population std of `samples`; the decay fields
/// are beta * previous + (1 - beta) * current, or current without history.
/// Empty samples carry `prev` forward unchanged (zeros without history).
ChannelReduction reduce_channel(std::span<const double> samples, const std::optional<ChannelReduction>& prev,
                                double beta = kDecayBeta);

struct ReducedFrame {
    double time = 0.0;
    Vip vip = 0;
    Dip dip = 0;
    std::array<double, kNumCounters> counters{};
    std::array<ChannelReduction, kNumChannels> reductions{};
    std::optional<GroundTruth> ground_truth;

    /// 8 counters then 13 x {avg, p90, std, decay_avg, decay_p90}.
    std::array<double, kNumFeatures> features() const;
};

/// Per-DIP reduction state: decay fields depend only on earlier frames of the
/// same DIP passed to this reducer.
class FrameReducer {
public:
    ReducedFrame reduce(const FeatureFrame& frame, std::optional<GroundTruth> truth = std::nullopt);
    void reset() { prev_.reset(); }
    bool has_history() const { return prev_.has_value(); }

private:
    std::optional<std::array<ChannelReduction, kNumChannels>> prev_;
};

/// The 73 feature names, e.g. "n_syn", "fct_avg", "pt_first_decay_p90".
const std::vector<std::string>& feature_names();
/// time, vip, dip, 73 features, n_cpu, cpu_usage, busy_threads.
const std::vector<std::string>& dataset_columns();

/// Numeric table, row-major.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const;
};

struct NormalizationStats {
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> std;

    /// name,mean,std rows with a header.
    void save(const std::filesystem::path& path) const;
    static NormalizationStats load(const std::filesystem::path& path);
    /// Index of `name`, throws std::out_of_range if absent.
    std::size_t index_of(const std::string& name) const;
};

/// Population mean/std per column, over `rows` (all rows when empty).
NormalizationStats compute_stats(const Table& table, std::span<const std::size_t> rows = {});
/// (x - mean) / std per column; columns with std < 1e-12 map to 0.
Table standardize(const Table& table, const NormalizationStats& stats);
std::pair<Table, NormalizationStats> standardize(const Table& table);
/// In-place standardization of one feature vector aligned with stats.
void standardize_in_place(std::span<double> values, const NormalizationStats& stats);

/// Nearest-rank q-quantile of every column.
std::vector<double> outlier_thresholds(const Table& table, double q = 0.99);
/// Drops rows where any column exceeds its threshold.
Table drop_outliers(const Table& table, std::span<const double> thresholds);
Table drop_outliers(const Table& table, double q = 0.99);

struct WindowRange {
    std::size_t begin;
    std::size_t end;  // exclusive
};

/// [i * stride, i * stride + length) for every window fully inside n rows.
std::vector<WindowRange> window_ranges(std::size_t n, std::size_t length = 64, std::size_t stride = 32);

template <class T>
std::vector<std::span<const T>> windowize(std::span<const T> rows, std::size_t length = 64, std::size_t stride = 32) {
    std::vector<std::span<const T>> out;
    for (auto r : window_ranges(rows.size(), length, stride)) out.push_back(rows.subspan(r.begin, r.end - r.begin));
    return out;
}

struct Dataset {
    std::vector<ReducedFrame> rows;
    std::uint64_t split_seed = 0;

    /// Sorts rows by (time, vip, dip).
    void sort();
    /// 73 feature columns, plus the 3 ground-truth columns if requested
    /// (rows without ground truth are skipped in that case).
    Table to_table(bool with_ground_truth) const;
};

/// Comma-separated dataset with a header row (79 columns); ground-truth cells
/// are empty when absent. Doubles use the shortest round-trip rendering.
void export_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset import_dataset(const std::filesystem::path& path);

std::string format_double(double value);

}  // namespace aquarius
