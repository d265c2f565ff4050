// Processor layer: periodic fetch of the newest frames, per-server busy-thread
// prediction with a pluggable estimator, and asynchronous weight updates.
#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "aquarius/cluster_sim.hpp"
#include "aquarius/feature_pipeline.hpp"
#include "aquarius/policies.hpp"
#include "aquarius/telemetry.hpp"

namespace aquarius {

struct EstimatorInput {
    const ReducedFrame& frame;
    std::span<const double> features;  // kNumFeatures values, standardized when stats are loaded
};

/// Predicts the number of busy worker threads of one server.
class Estimator {
public:
    virtual ~Estimator() = default;
    virtual double predict(const EstimatorInput& input) = 0;
    virtual std::string describe() const = 0;
};

class LinearEstimator final : public Estimator {
public:
    LinearEstimator(double bias, const std::array<double, kNumFeatures>& coefficients)
        : bias_(bias), coefficients_(coefficients) {}

    double predict(const EstimatorInput& input) override;
    double predict(std::span<const double> features) const;
    std::string describe() const override { return "linear"; }

    double bias() const { return bias_; }
    const std::array<double, kNumFeatures>& coefficients() const { return coefficients_; }

private:
    double bias_;
    std::array<double, kNumFeatures> coefficients_;
};

/// Loads a name,value file holding one row per feature plus a __bias__ row.
/// Rows bind by name; unknown or missing names are reported together.
LinearEstimator load_coefficients(const std::filesystem::path& path);

/// Upper-bound estimator: returns the ground-truth busy threads attached to
/// the frame (throws if none is attached).
class OracleEstimator final : public Estimator {
public:
    double predict(const EstimatorInput& input) override;
    std::string describe() const override { return "oracle"; }
};

/// raw_i = (max_j p_j - p_i) + 1; w_i = max(1, round(w_max * raw_i / max_j raw_j)).
std::map<Dip, std::uint32_t> weights_from_predictions(const std::map<Dip, double>& predictions,
                                                      std::uint32_t w_max = ActionRegisters::kMaxWeight);

struct ControlOptions {
    double period = 0.250;
    double frame_interval = 0.050;
    std::uint32_t w_max = ActionRegisters::kMaxWeight;
};

using GroundTruthSource = std::function<std::optional<GroundTruth>(Dip dip, double time)>;

/// One control loop per VIP. Reads frames from one store per data-plane
/// worker (merged per DIP), writes weights to `registers`, and re-syncs the
/// registered policies after each apply.
class ControlLoop {
public:
    ControlLoop(std::vector<const VipStore*> stores, ActionRegisters& registers, Estimator& estimator,
                ControlOptions options = {});

    void set_stats(std::optional<NormalizationStats> stats);
    void set_ground_truth_source(GroundTruthSource source) { ground_truth_ = std::move(source); }
    void add_policy(Policy* policy) { policies_.push_back(policy); }

    /// Returns the new weight generation, or nullopt for a no-op (too early,
    /// no fresh frame, or estimator failure; weights are left untouched).
    std::optional<std::uint64_t> control_tick(double now);

    std::uint64_t ticks() const { return ticks_; }
    std::uint64_t faults() const { return faults_; }
    std::uint64_t applied() const { return applied_; }
    const std::map<Dip, double>& last_predictions() const { return predictions_; }
    /// window_end of every frame used by the latest successful tick.
    const std::vector<double>& last_frame_times() const { return frame_times_; }

private:
    std::vector<const VipStore*> stores_;
    std::vector<FrameReader> readers_;
    ActionRegisters* registers_;
    Estimator* estimator_;
    ControlOptions options_;
    std::optional<NormalizationStats> stats_;
    std::vector<std::size_t> stats_index_;
    GroundTruthSource ground_truth_;
    std::vector<Policy*> policies_;

    std::map<Dip, FrameReducer> reducers_;
    std::map<Dip, std::uint64_t> last_seq_;
    std::map<Dip, double> predictions_;
    std::vector<double> frame_times_;
    std::optional<double> last_tick_;
    std::uint64_t ticks_ = 0;
    std::uint64_t faults_ = 0;
    std::uint64_t applied_ = 0;
};

/// Runs control_tick on its own thread at a wall-clock period. Time passed
/// to the loop is seconds since start().
class ControlThread {
public:
    ControlThread(ControlLoop& loop, std::chrono::microseconds period);
    ~ControlThread();
    ControlThread(const ControlThread&) = delete;
    ControlThread& operator=(const ControlThread&) = delete;

    void start();
    void stop();
    std::uint64_t ticks() const { return ticks_.load(std::memory_order_relaxed); }

private:
    ControlLoop* loop_;
    std::chrono::microseconds period_;
    std::jthread thread_;
    std::atomic<std::uint64_t> ticks_{0};
};

}  // namespace aquarius
