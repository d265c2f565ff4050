#pragma once

#include <cstdint>
#include <optional>

#include "aquarius/parser.hpp"
#include "aquarius/policies.hpp"
#include "aquarius/telemetry.hpp"

namespace aquarius {

/// One data-plane worker: selects a backend for new flows, pins it in the
/// flow table, and records the parser output into the telemetry writer.
class DataPlane {
public:
    DataPlane(FlowTable& table, FrameWriter& writer, const Policy& policy)
        : table_(&table), writer_(&writer), policy_(&policy) {}

    /// Backend the packet was attributed to, or nullopt when a new flow found
    /// no active backend (the flow is dropped and counted).
    std::optional<Dip> process(const PacketEvent& pkt, double now);

    /// Idle-flow eviction with the ongoing gauge mirrored into telemetry.
    std::size_t expire(double now, double idle_timeout = kDefaultIdleTimeout);

    const ParseOutput& last_output() const { return out_; }
    std::uint64_t dropped() const { return dropped_; }

private:
    FlowTable* table_;
    FrameWriter* writer_;
    const Policy* policy_;
    ParseOutput out_;
    std::uint64_t dropped_ = 0;
};

inline std::optional<Dip> DataPlane::process(const PacketEvent& pkt, double now) {
    auto dip = table_->lookup(pkt.flow_id);
    if (!dip) {
        // Unknown non-SYN packets are attributed to the hashed backend so the
        // anomaly counter lands somewhere meaningful.
        dip = policy_->pick(pkt.tuple);
        if (!dip) {
            ++dropped_;
            return std::nullopt;
        }
    }
    table_->on_packet(pkt, *dip, now, out_);
    for (std::size_t c = 0; c < kNumCounters; ++c) {
        if (out_.counters[c] != 0) writer_->add(out_.dip, static_cast<Counter>(c), out_.counters[c]);
    }
    for (const auto& o : out_.observed()) writer_->observe(o.dip, o.channel, o.value, now);
    return out_.dip;
}

inline std::size_t DataPlane::expire(double now, double idle_timeout) {
    return table_->expire_flows(now, idle_timeout, [this](Dip d) { writer_->add(d, Counter::kFlowOngoing, -1); });
}

}  // namespace aquarius
