#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace aquarius {

struct BenchConfig {
    std::uint64_t flows = 20000;
    std::uint32_t servers = 10;
    std::uint32_t repeats = 5;
    double frame = 0.050;  // simulated seconds between frame publications
    std::uint64_t seed = 7;
};

struct BenchResult {
    std::uint64_t packets = 0;   // per repeat
    std::uint64_t frames = 0;    // publications per repeat
    std::vector<double> ns_per_packet;  // one entry per timed repeat
    double mean_ns = 0.0;
    double min_ns = 0.0;
    double max_ns = 0.0;
};

/// Per-packet cost of flow lookup, parsing, counter updates, reservoir
/// inserts and the amortized frame publications, on a pre-generated packet
/// stream replayed through one data-plane worker. One untimed warm-up pass
/// precedes the timed repeats.
BenchResult run_bench(const BenchConfig& config);

std::string to_json(const BenchResult& result);

}  // namespace aquarius
