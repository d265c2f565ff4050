// Closed-loop experiment: trace -> policy -> parser -> telemetry -> servers
// -> control loop, driven by one discrete-event clock.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aquarius/estimator.hpp"
#include "aquarius/feature_pipeline.hpp"
#include "aquarius/metrics.hpp"
#include "aquarius/packet_model.hpp"
#include "aquarius/parser.hpp"
#include "aquarius/policies.hpp"

namespace aquarius {

std::string_view version();

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EstimatorKind : std::uint8_t { kOff, kLinear, kOracle };

std::string_view to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(std::string_view name);

struct ExperimentConfig {
    TraceConfig trace;
    std::string servers = "6x2,4x4";
    PolicyKind policy = PolicyKind::kEcmp;
    EstimatorKind estimator = EstimatorKind::kOff;
    std::string model_path;
    std::string stats_path;
    double frame_ms = 50.0;
    double period_ms = 250.0;
    std::uint64_t seed = 1;
    std::string out_dir;
    double client_rtt = kDefaultClientRtt;
    std::uint32_t mtu = kDefaultMtu;
    double idle_timeout = kDefaultIdleTimeout;
    std::uint32_t table_size = MaglevTable::kDefaultSize;
    /// Reduce every frame of every DIP into the exported dataset.
    bool collect_dataset = true;

    /// Throws ConfigError describing the first problem found.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
};

struct WindowMetrics {
    double time = 0.0;
    double jain_busy = 1.0;
    double overprovision_busy = 1.0;
    double mean_cpu = 0.0;
    double fct_mean = 0.0;
    double fct_p90 = 0.0;
    double fct_p99 = 0.0;
    std::uint64_t fct_count = 0;
    std::uint64_t rst_count = 0;
};

/// Run-level values that are pure functions of the window series.
struct Aggregates {
    double mean_jain = 1.0;
    double mean_overprovision = 1.0;
    double mean_cpu = 0.0;
    double fct_mean = 0.0;  // completion-count weighted
    std::uint64_t fct_count = 0;
    std::uint64_t rst_count = 0;

    static Aggregates from_series(const std::vector<WindowMetrics>& series);
};

struct FlowTotals {
    std::uint64_t generated = 0;
    std::uint64_t completed = 0;
    std::uint64_t reset = 0;
    std::uint64_t dropped = 0;
    std::uint64_t in_flight = 0;
};

struct ControlTotals {
    std::uint64_t ticks = 0;
    std::uint64_t applied = 0;
    std::uint64_t faults = 0;
    std::uint64_t table_rebuilds = 0;
};

struct Report {
    ExperimentConfig config;
    std::vector<WindowMetrics> series;
    Aggregates aggregate;
    FlowTotals flows;
    FctStats flow_fct;  // over individual flows, not recomputable from the series
    ControlTotals control;
    std::uint64_t packets = 0;
    std::uint64_t anomalies = 0;
    Dataset dataset;
    std::optional<NormalizationStats> feature_stats;
};

/// Runs one experiment. `estimator_override` replaces the configured
/// estimator (the config's estimator kind must not be off).
Report run_experiment(const ExperimentConfig& config, Estimator* estimator_override = nullptr);

/// report.json, metrics.csv and, when a dataset was collected, features.csv
/// (+ .meta.json) and features_stats.csv.
void write_report(const Report& report, const std::filesystem::path& dir);
void write_metrics_csv(const std::vector<WindowMetrics>& series, const std::filesystem::path& path);
nlohmann::json report_json(const Report& report);

/// Mean work per query of a trace configuration, in core-seconds.
double mean_work(const TraceConfig& trace);

/// Completed-flow throughput of the cluster driven at twice its nominal
/// capacity under ECMP, measured after a warm-up quarter of the run.
double measure_saturation_rate(const ExperimentConfig& base, double duration = 20.0);

}  // namespace aquarius
