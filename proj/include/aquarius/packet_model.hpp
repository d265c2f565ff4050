// Flow and packet abstractions plus seeded workload trace generators.
//
// Work is expressed in core-seconds: the time one CPU core needs to serve a
// query. A for-loop query draws its work from an exponential distribution and
// replies with a body proportional to it; a file query fetches one of seven
// static file sizes and costs a fixed amount of work per byte.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "aquarius/features.hpp"

namespace aquarius {

struct FiveTuple {
    std::uint32_t src_ip = 0;
    std::uint16_t src_port = 0;
    std::uint32_t dst_vip = 0;
    std::uint16_t dst_port = 0;
    std::uint8_t proto = 6;

    /// Little-endian wire image used for hashing (13 bytes).
    std::array<std::uint8_t, 13> bytes() const;

    friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
};

struct FlowRequest {
    double arrival_time = 0.0;
    std::uint64_t flow_id = 0;
    FiveTuple tuple;
    double work = 0.0;  // core-seconds
    std::uint64_t request_bytes = 1;
    std::uint64_t response_bytes = 1;

    friend bool operator==(const FlowRequest&, const FlowRequest&) = default;
};

enum class PacketKind : std::uint8_t { kSyn, kAck, kData, kFin, kRst };

std::string_view to_string(PacketKind kind);

struct PacketEvent {
    double time = 0.0;
    std::uint64_t flow_id = 0;
    FiveTuple tuple;
    PacketKind kind = PacketKind::kSyn;
    std::uint32_t payload_bytes = 0;
    std::uint32_t ts_val = 0;
    std::uint32_t ts_ecr = 0;
};

enum class TraceKind : std::uint8_t { kPoissonForLoop, kFile, kMixture };

std::string_view to_string(TraceKind kind);
TraceKind parse_trace_kind(std::string_view name);

inline constexpr double kDefaultMeanWork = 0.15;
inline constexpr double kFileWorkPerByte = 1e-8;
inline constexpr double kForLoopBytesPerCoreSecond = 1e6;
inline constexpr double kDefaultClientRtt = 400e-6;
inline constexpr double kTimestampTick = 1e-3;
inline constexpr std::uint32_t kDefaultMtu = 1500;
inline constexpr double kMaxRateQps = 1e5;

inline constexpr std::array<std::uint64_t, 7> kFileSizes = {
    100'000, 200'000, 500'000, 750'000, 1'000'000, 2'000'000, 5'000'000,
};

struct TraceConfig {
    TraceKind kind = TraceKind::kPoissonForLoop;
    double rate_qps = 100.0;
    double mean_work = kDefaultMeanWork;
    double duration = 10.0;
    std::uint64_t seed = 1;
    Vip vip = 0;
    // Mixture: two for-loop populations at light/heavy fractions of mean_work.
    double mixture_light_factor = 0.5;
    double mixture_heavy_factor = 1.5;
    double mixture_heavy_share = 0.5;

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

/// Seeded, single-threaded stream of flow arrivals. Two generators built from
/// equal configs yield identical streams.
class TraceGenerator {
public:
    explicit TraceGenerator(const TraceConfig& config);

    /// Next flow, or nullopt once arrivals pass the configured duration.
    std::optional<FlowRequest> next();

    const TraceConfig& config() const { return config_; }

private:
    FiveTuple draw_tuple();

    TraceConfig config_;
    std::mt19937_64 rng_;
    double clock_ = 0.0;
    std::uint64_t next_id_ = 1;
    bool exhausted_ = false;
};

/// Convenience: drain a generator into a vector.
std::vector<FlowRequest> generate_trace(const TraceConfig& config);

/// Timestamp option clock shared by client and server hosts (1 ms ticks,
/// offset by one so that a valid echo is never zero).
std::uint32_t timestamp_ticks(double time);

/// LB-visible client packets of one flow. Events before `response_begin` are
/// the handshake and the request; the remaining ACKs and the closing FIN are
/// timed by stamp_response() once the server's reply is known.
struct FlowPackets {
    std::vector<PacketEvent> events;
    std::size_t response_begin = 0;

    std::span<PacketEvent> request_phase() { return {events.data(), response_begin}; }
    std::span<PacketEvent> response_phase() {
        return {events.data() + response_begin, events.size() - response_begin};
    }
};

FlowPackets flow_to_packets(const FlowRequest& flow, std::uint32_t mtu_bytes = kDefaultMtu,
                            double client_rtt = kDefaultClientRtt);

/// Time the response phase: the first ACK reaches the LB one RTT after the
/// server emitted its reply and echoes the server timestamp of that moment.
void stamp_response(FlowPackets& packets, double server_emit_time, std::uint32_t mtu_bytes = kDefaultMtu,
                    double client_rtt = kDefaultClientRtt);

/// Client abort after the server refused the connection.
PacketEvent make_reset(const FlowRequest& flow, double time);

}  // namespace aquarius
