// Data-plane parser: per-flow state and extraction of counters and sampled
// observations from client-to-server packets as seen by the load balancer.
//
// Processing time is inferred from the TCP timestamp option: the request is
// stamped when its data passes the LB, and the first later client segment
// whose ts_ecr advances past the last echo must acknowledge a server segment
// sent after the request arrived, i.e. the response.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "aquarius/features.hpp"
#include "aquarius/packet_model.hpp"

namespace aquarius {

inline constexpr double kDefaultIdleTimeout = 10.0;

struct FlowState {
    std::uint64_t flow_id = 0;
    Vip vip = 0;
    Dip dip = 0;
    double t_syn = 0.0;
    std::optional<double> t_first_data;
    double t_last_pkt = 0.0;
    std::optional<double> t_last_request;
    std::optional<double> t_last_ack;
    std::uint32_t last_seen_ts_ecr = 0;
    std::uint64_t bytes_in = 0;
    std::uint64_t pkts_in = 0;
    std::uint64_t request_bytes = 0;  // payload of the request awaiting a response
    std::uint32_t pt_samples = 0;
    bool awaiting_response = false;
};

struct FeatureObservation {
    Vip vip = 0;
    Dip dip = 0;
    Channel channel = Channel::kFct;
    double value = 0.0;
    double time = 0.0;
};

/// Result of one packet: signed counter deltas (the ongoing-flows gauge may
/// go down) and at most a handful of observations, without allocating.
struct ParseOutput {
    static constexpr std::size_t kMaxObservations = kNumChannels;

    Dip dip = 0;
    bool known_flow = true;
    std::array<std::int64_t, kNumCounters> counters{};
    std::array<FeatureObservation, kMaxObservations> observations{};
    std::size_t n_observations = 0;

    std::int64_t counter(Counter c) const { return counters[index(c)]; }
    std::span<const FeatureObservation> observed() const { return {observations.data(), n_observations}; }
    std::optional<double> value(Channel c) const;
};

class FlowTable {
public:
    explicit FlowTable(Vip vip = 0, std::size_t expected_flows = 1024);

    /// Backend pinned for `flow_id`, if the flow is tracked.
    std::optional<Dip> lookup(std::uint64_t flow_id) const;

    /// Parses one packet. For a SYN of a new flow `dip` is the backend chosen
    /// by the policy; for every other packet the pinned backend wins.
    /// Non-SYN packets of unknown flows and duplicate SYNs count as
    /// retransmission-class anomalies and produce no observation.
    void on_packet(const PacketEvent& pkt, Dip dip, double now, ParseOutput& out);
    ParseOutput on_packet(const PacketEvent& pkt, Dip dip, double now);

    /// Removes flows idle for more than `idle_timeout`; `on_evict(dip)` is
    /// called once per evicted flow so callers can mirror the gauge.
    template <class OnEvict>
    std::size_t expire_flows(double now, double idle_timeout, OnEvict&& on_evict);
    std::size_t expire_flows(double now, double idle_timeout = kDefaultIdleTimeout);

    std::size_t size() const { return flows_.size(); }
    /// Live flows pinned to `dip`.
    std::int64_t ongoing(Dip dip) const;
    std::uint64_t anomalies() const { return anomalies_; }
    const FlowState* find(std::uint64_t flow_id) const;

private:
    void close(std::unordered_map<std::uint64_t, FlowState>::iterator it, const PacketEvent& pkt, double now,
               ParseOutput& out);
    std::int64_t& ongoing_ref(Dip dip);

    Vip vip_;
    std::unordered_map<std::uint64_t, FlowState> flows_;
    std::vector<std::int64_t> ongoing_;
    std::vector<std::optional<double>> last_syn_;  // per dip, for FLOW_IAT
    std::uint64_t anomalies_ = 0;
};

/// Processing time measured on `ack` for a flow awaiting a response, or
/// nullopt when the echoed timestamp did not advance. Updates the flow state.
std::optional<double> estimate_processing_time(FlowState& fs, const PacketEvent& ack, double now);

template <class OnEvict>
std::size_t FlowTable::expire_flows(double now, double idle_timeout, OnEvict&& on_evict) {
    if (!(idle_timeout > 0.0)) throw std::invalid_argument("idle_timeout must be > 0");
    std::size_t evicted = 0;
    for (auto it = flows_.begin(); it != flows_.end();) {
        if (now - it->second.t_last_pkt > idle_timeout) {
            const Dip dip = it->second.dip;
            --ongoing_ref(dip);
            on_evict(dip);
            it = flows_.erase(it);
            ++evicted;
        } else {
            ++it;
        }
    }
    return evicted;
}

}  // namespace aquarius
