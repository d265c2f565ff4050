// Prefork web server model: a bounded worker pool served by processor
// sharing over n_cpu cores, a FIFO accept backlog, and reset on overflow.
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>
#include <vector>

#include "aquarius/features.hpp"

namespace aquarius {

struct ServerSpec {
    Dip dip = 0;
    std::uint32_t n_cpu = 2;
    std::uint32_t max_workers = 32;
    std::uint32_t backlog = 128;

    void validate() const;
};

/// Parses groups such as "36x2,24x4" (count x cores). DIPs are numbered in
/// order of appearance starting at 0.
std::vector<ServerSpec> parse_server_groups(std::string_view groups);

enum class Admission : std::uint8_t { kAdmitted, kQueued, kRstOverflow };

struct Job {
    std::uint64_t flow_id = 0;
    double work = 0.0;  // core-seconds, > 0
};

struct Completion {
    std::uint64_t flow_id = 0;
    Dip dip = 0;
    double time = 0.0;  // response emission time at the server
};

struct GroundTruth {
    Dip dip = 0;
    double time = 0.0;
    std::uint32_t n_cpu = 0;
    double cpu_usage = 0.0;
    std::uint32_t busy_threads = 0;
};

class Server {
public:
    explicit Server(const ServerSpec& spec);

    /// Offers a connection to the worker pool. Advances the clock to `now`
    /// first; completions produced by that catch-up are returned by the next
    /// advance() call.
    Admission submit(const Job& job, double now);

    /// Runs the fluid model up to `until`; each busy job progresses at
    /// min(1, n_cpu / busy) core-seconds per second.
    std::vector<Completion> advance(double until);

    std::optional<double> next_completion_time() const;

    /// Instantaneous load at the current clock.
    GroundTruth ground_truth() const;

    const ServerSpec& spec() const { return spec_; }
    double clock() const { return clock_; }
    std::size_t busy() const { return busy_.size(); }
    std::size_t queued() const { return queue_.size(); }
    /// Core-seconds of service delivered since construction.
    double delivered_work() const { return delivered_; }
    std::uint64_t resets() const { return resets_; }

private:
    struct Running {
        double finish_v;  // virtual time at which the job is done
        std::uint64_t order;
        std::uint64_t flow_id;
    };

    double rate() const;
    void admit(const Job& job);
    void run_until(double until, std::vector<Completion>& out);

    ServerSpec spec_;
    std::vector<Running> busy_;  // min-heap on (finish_v, order)
    std::deque<Job> queue_;
    std::vector<Completion> pending_;
    double clock_ = 0.0;
    double virtual_ = 0.0;  // service attained by any job busy since t=0
    double delivered_ = 0.0;
    std::uint64_t order_ = 0;
    std::uint64_t resets_ = 0;
};

}  // namespace aquarius
