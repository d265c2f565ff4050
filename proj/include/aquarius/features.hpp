// Feature inventory shared by the parser, the telemetry store and the
// feature pipeline: 8 counters and 13 sampled channels per (VIP, DIP).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace aquarius {

using Dip = std::uint32_t;
using Vip = std::uint32_t;

enum class Counter : std::uint8_t {
    kSyn = 0,
    kFin,
    kRst,
    kPkt,
    kByte,
    kFlowComplete,
    kRetransmit,
    kFlowOngoing,  // gauge, not reset at window start
};

enum class Channel : std::uint8_t {
    kFlowDuration = 0,
    kFct,
    kPtFirst,
    kPtGeneral,
    kPktIat,
    kFlowIat,
    kRequestBytes,
    kBytesPerFlow,
    kPktsPerFlow,
    kBytesPerPkt,
    kSynToFirstData,
    kAckGap,
    kOngoingAtComplete,
};

inline constexpr std::size_t kNumCounters = 8;
inline constexpr std::size_t kNumChannels = 13;
inline constexpr std::size_t kNumReductions = 5;
inline constexpr std::size_t kNumFeatures = kNumCounters + kNumChannels * kNumReductions;  // 73

inline constexpr std::array<std::string_view, kNumCounters> kCounterNames = {
    "n_syn", "n_fin", "n_rst", "n_pkt", "n_byte", "n_flow_complete", "n_retransmit", "n_flow_ongoing",
};

inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "flow_duration", "fct",           "pt_first",       "pt_general",    "pkt_iat",
    "flow_iat",      "request_bytes", "bytes_per_flow", "pkts_per_flow", "bytes_per_pkt",
    "syn_to_first_data", "ack_gap",   "ongoing_at_complete",
};

inline constexpr std::array<std::string_view, kNumReductions> kReductionNames = {
    "avg", "p90", "std", "decay_avg", "decay_p90",
};

constexpr std::size_t index(Counter c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index(Channel c) { return static_cast<std::size_t>(c); }

}  // namespace aquarius
