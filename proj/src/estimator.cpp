#include "aquarius/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <utility>

#include <spdlog/spdlog.h>

namespace aquarius {

double LinearEstimator::predict(std::span<const double> features) const {
    if (features.size() != kNumFeatures) throw std::invalid_argument("linear estimator expects 73 features");
    double y = bias_;
    for (std::size_t i = 0; i < kNumFeatures; ++i) y += coefficients_[i] * features[i];
    return y;
}

double LinearEstimator::predict(const EstimatorInput& input) { return std::as_const(*this).predict(input.features); }

LinearEstimator load_coefficients(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open coefficients file '" + path.string() + "'");

    const auto& names = feature_names();
    std::map<std::string, double> rows;
    std::vector<std::string> unknown;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected name,value");
        const std::string name = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        if (line_no == 1 && name == "name") continue;  // optional header
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad value '" + value + "'");
        }
        if (name != "__bias__" && std::find(names.begin(), names.end(), name) == names.end()) unknown.push_back(name);
        rows[name] = v;
    }

    std::vector<std::string> missing;
    if (!rows.contains("__bias__")) missing.emplace_back("__bias__");
    for (const auto& n : names) {
        if (!rows.contains(n)) missing.push_back(n);
    }
    if (!unknown.empty() || !missing.empty()) {
        std::string msg = "coefficients file '" + path.string() + "':";
        if (!missing.empty()) {
            msg += " missing";
            for (const auto& n : missing) msg += " " + n;
            msg += ";";
        }
        if (!unknown.empty()) {
            msg += " unknown";
            for (const auto& n : unknown) msg += " " + n;
            msg += ";";
        }
        throw std::runtime_error(msg);
    }

    std::array<double, kNumFeatures> coef{};
    for (std::size_t i = 0; i < kNumFeatures; ++i) coef[i] = rows.at(names[i]);
    return LinearEstimator(rows.at("__bias__"), coef);
}

double OracleEstimator::predict(const EstimatorInput& input) {
    if (!input.frame.ground_truth) throw std::runtime_error("oracle estimator needs ground truth");
    return static_cast<double>(input.frame.ground_truth->busy_threads);
}

std::map<Dip, std::uint32_t> weights_from_predictions(const std::map<Dip, double>& predictions, std::uint32_t w_max) {
    std::map<Dip, std::uint32_t> out;
    if (predictions.empty()) return out;
    double hi = -INFINITY;
    for (const auto& [dip, p] : predictions) {
        if (!std::isfinite(p)) throw std::invalid_argument("non-finite prediction for dip " + std::to_string(dip));
        hi = std::max(hi, p);
    }
    double raw_max = 0.0;
    for (const auto& [dip, p] : predictions) raw_max = std::max(raw_max, hi - p + 1.0);
    for (const auto& [dip, p] : predictions) {
        const double raw = hi - p + 1.0;
        const double w = std::round(static_cast<double>(w_max) * raw / raw_max);
        out[dip] = static_cast<std::uint32_t>(std::clamp(w, 1.0, static_cast<double>(w_max)));
    }
    return out;
}

// ---------------------------------------------------------------- loop

ControlLoop::ControlLoop(std::vector<const VipStore*> stores, ActionRegisters& registers, Estimator& estimator,
                         ControlOptions options)
    : stores_(std::move(stores)), registers_(&registers), estimator_(&estimator), options_(options) {
    if (stores_.empty()) throw std::invalid_argument("control loop needs at least one store");
    if (!(options_.period > options_.frame_interval))
        throw std::invalid_argument("control period must exceed the frame interval");
    readers_.reserve(stores_.size());
    for (const auto* s : stores_) readers_.emplace_back(*s, 0);
}

void ControlLoop::set_stats(std::optional<NormalizationStats> stats) {
    stats_index_.clear();
    if (stats) {
        for (const auto& name : feature_names()) stats_index_.push_back(stats->index_of(name));
    }
    stats_ = std::move(stats);
}

std::optional<std::uint64_t> ControlLoop::control_tick(double now) {
    if (last_tick_ && now < *last_tick_ + options_.period - 1e-9) return std::nullopt;
    last_tick_ = now;
    ++ticks_;

    std::map<Dip, std::vector<FeatureFrame>> fetched;
    for (auto& reader : readers_) {
        for (auto& [dip, frame] : reader.fetch_latest(now)) fetched[dip].push_back(std::move(frame));
    }

    const double oldest = now - options_.period - options_.frame_interval;
    std::map<Dip, double> fresh;
    std::vector<double> frame_times;
    try {
        for (auto& [dip, frames] : fetched) {
            FeatureFrame frame = merge_frames(frames);
            if (!(frame.window_end > oldest) || frame.window_end > now + 1e-9) continue;

            std::optional<GroundTruth> truth;
            if (ground_truth_) truth = ground_truth_(dip, frame.window_end);
            const ReducedFrame reduced = reducers_[dip].reduce(frame, truth);

            auto features = reduced.features();
            if (stats_) {
                for (std::size_t i = 0; i < kNumFeatures; ++i) {
                    const auto k = stats_index_[i];
                    features[i] = stats_->std[k] < kStdEpsilon ? 0.0
                                                               : (features[i] - stats_->mean[k]) / stats_->std[k];
                }
            }
            const double p = estimator_->predict({reduced, features});
            if (!std::isfinite(p)) throw std::runtime_error("estimator returned a non-finite prediction");
            fresh[dip] = std::max(0.0, p);
            frame_times.push_back(frame.window_end);
        }
    } catch (const std::exception& e) {
        ++faults_;
        spdlog::warn("control tick at {:.3f}s: estimator '{}' failed, weights kept: {}", now, estimator_->describe(),
                     e.what());
        return std::nullopt;
    }
    if (fresh.empty()) return std::nullopt;

    auto predictions = predictions_;
    for (const auto& [dip, p] : fresh) predictions[dip] = p;
    const auto active = stores_.front()->active_dips();
    std::map<Dip, double> live;
    for (Dip d : active) {
        if (auto it = predictions.find(d); it != predictions.end()) live[d] = it->second;
    }
    if (live.empty()) return std::nullopt;

    const auto weights = weights_from_predictions(live, options_.w_max);
    std::vector<std::uint32_t> vec(registers_->max_dips(), ActionRegisters::kMinWeight);
    for (Dip d : active) {
        auto it = weights.find(d);
        vec[d] = it == weights.end() ? options_.w_max : it->second;
    }
    const auto generation = registers_->apply_weights(vec, now);
    for (auto* p : policies_) p->sync();

    predictions_ = std::move(predictions);
    frame_times_ = std::move(frame_times);
    ++applied_;
    return generation;
}

// ---------------------------------------------------------------- thread

ControlThread::ControlThread(ControlLoop& loop, std::chrono::microseconds period) : loop_(&loop), period_(period) {}

ControlThread::~ControlThread() { stop(); }

void ControlThread::start() {
    if (thread_.joinable()) return;
    thread_ = std::jthread([this](std::stop_token stop) {
        const auto t0 = std::chrono::steady_clock::now();
        auto next = t0 + period_;
        while (!stop.stop_requested()) {
            std::this_thread::sleep_until(next);
            if (stop.stop_requested()) break;
            const double now = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            loop_->control_tick(now);
            ticks_.fetch_add(1, std::memory_order_relaxed);
            next += period_;
        }
    });
}

void ControlThread::stop() {
    if (!thread_.joinable()) return;
    thread_.request_stop();
    thread_.join();
}

}  // namespace aquarius
