#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "aquarius/cluster_sim.hpp"
#include "aquarius/packet_model.hpp"
#include "aquarius/parser.hpp"

using namespace aquarius;

namespace {

PacketEvent pkt(std::uint64_t flow, PacketKind kind, double t, std::uint32_t payload = 0, std::uint32_t ecr = 0) {
    PacketEvent p;
    p.flow_id = flow;
    p.kind = kind;
    p.time = t;
    p.payload_bytes = payload;
    p.ts_val = timestamp_ticks(t);
    p.ts_ecr = ecr;
    return p;
}

}  // namespace

TEST_CASE("flow duration and fct on FIN") {
    FlowTable table;
    table.on_packet(pkt(1, PacketKind::kSyn, 0.0), 0, 0.0);
    const auto out = table.on_packet(pkt(1, PacketKind::kFin, 2.0), 0, 2.0);
    REQUIRE(out.value(Channel::kFlowDuration));
    CHECK(*out.value(Channel::kFlowDuration) == 2.0);
    CHECK(*out.value(Channel::kFct) == 2.0);
    CHECK(out.counter(Counter::kFin) == 1);
    CHECK(out.counter(Counter::kFlowOngoing) == -1);
    CHECK(table.size() == 0);
}

TEST_CASE("fin of a one-packet request reports flow totals together") {
    FlowTable table;
    table.on_packet(pkt(1, PacketKind::kSyn, 0.0), 3, 0.0);
    table.on_packet(pkt(1, PacketKind::kData, 0.001, 400, 1), 3, 0.001);
    const auto* fs = table.find(1);
    REQUIRE(fs);
    const auto pkts = fs->pkts_in + 1;
    const auto bytes = fs->bytes_in;
    const auto out = table.on_packet(pkt(1, PacketKind::kFin, 0.5), 3, 0.5);
    CHECK(*out.value(Channel::kPktsPerFlow) == static_cast<double>(pkts));
    CHECK(*out.value(Channel::kBytesPerFlow) == static_cast<double>(bytes));
    CHECK(bytes == 400);
    CHECK(out.dip == 3);
}

TEST_CASE("processing time from timestamp echo") {
    FlowState fs;
    fs.awaiting_response = true;
    fs.t_last_request = 1.0;
    fs.last_seen_ts_ecr = 1001;
    auto ack = pkt(1, PacketKind::kAck, 1.25, 0, 1200);
    const auto pt = estimate_processing_time(fs, ack, 1.25);
    REQUIRE(pt);
    CHECK(*pt == doctest::Approx(0.25));
    CHECK_FALSE(fs.awaiting_response);
    CHECK(fs.last_seen_ts_ecr == 1200);

    FlowState same;
    same.awaiting_response = true;
    same.t_last_request = 1.0;
    same.last_seen_ts_ecr = 1200;
    CHECK_FALSE(estimate_processing_time(same, ack, 1.3));
}

TEST_CASE("pt first then pt general on a persistent flow") {
    FlowTable table;
    table.on_packet(pkt(1, PacketKind::kSyn, 0.0), 0, 0.0);
    table.on_packet(pkt(1, PacketKind::kData, 0.001, 300, 1), 0, 0.001);
    auto a = table.on_packet(pkt(1, PacketKind::kAck, 0.2, 0, 150), 0, 0.2);
    CHECK(*a.value(Channel::kPtFirst) == doctest::Approx(0.199));
    CHECK(*a.value(Channel::kRequestBytes) == 300);
    CHECK_FALSE(a.value(Channel::kPtGeneral));
    table.on_packet(pkt(1, PacketKind::kData, 0.3, 100, 150), 0, 0.3);
    auto b = table.on_packet(pkt(1, PacketKind::kAck, 0.45, 0, 400), 0, 0.45);
    CHECK(*b.value(Channel::kPtGeneral) == doctest::Approx(0.15));
    CHECK(*b.value(Channel::kRequestBytes) == 100);
    auto fin = table.on_packet(pkt(1, PacketKind::kFin, 0.5, 0, 400), 0, 0.5);
    CHECK(fin.counter(Counter::kFlowComplete) == 1);
}

TEST_CASE("unknown flows and duplicate syns are anomalies without observations") {
    FlowTable table;
    auto out = table.on_packet(pkt(7, PacketKind::kAck, 1.0), 0, 1.0);
    CHECK(out.counter(Counter::kRetransmit) == 1);
    CHECK(out.observed().empty());
    CHECK_FALSE(out.known_flow);
    table.on_packet(pkt(8, PacketKind::kSyn, 1.0), 0, 1.0);
    out = table.on_packet(pkt(8, PacketKind::kSyn, 1.1), 0, 1.1);
    CHECK(out.counter(Counter::kRetransmit) == 1);
    CHECK(out.counter(Counter::kSyn) == 0);
    CHECK(out.observed().empty());
    CHECK(table.anomalies() == 2);
    CHECK(table.ongoing(0) == 1);
}

TEST_CASE("rst closes without fct") {
    FlowTable table;
    table.on_packet(pkt(1, PacketKind::kSyn, 0.0), 0, 0.0);
    const auto out = table.on_packet(pkt(1, PacketKind::kRst, 0.1), 0, 0.1);
    CHECK(out.counter(Counter::kRst) == 1);
    CHECK(out.value(Channel::kFlowDuration));
    CHECK_FALSE(out.value(Channel::kFct));
    CHECK(table.ongoing(0) == 0);
}

TEST_CASE("pinned backend wins over the offered one") {
    FlowTable table;
    table.on_packet(pkt(1, PacketKind::kSyn, 0.0), 2, 0.0);
    const auto out = table.on_packet(pkt(1, PacketKind::kData, 0.1, 10), 5, 0.1);
    CHECK(out.dip == 2);
    CHECK(*table.lookup(1) == 2);
    CHECK_FALSE(table.lookup(99));
}

TEST_CASE("expiry") {
    FlowTable table;
    CHECK(table.expire_flows(100.0, 10.0) == 0);
    for (std::uint64_t f = 1; f <= 5; ++f) table.on_packet(pkt(f, PacketKind::kSyn, 0.0), f % 2, 0.0);
    table.on_packet(pkt(4, PacketKind::kAck, 15.0), 0, 15.0);
    table.on_packet(pkt(5, PacketKind::kAck, 15.0), 0, 15.0);
    std::map<Dip, int> evicted;
    CHECK(table.expire_flows(20.0, 10.0, [&](Dip d) { ++evicted[d]; }) == 3);
    CHECK(table.size() == 2);
    // Recount: the gauge must equal live flows per backend.
    CHECK(table.ongoing(0) == 1);
    CHECK(table.ongoing(1) == 1);
    CHECK(evicted[0] + evicted[1] == 3);
    CHECK_THROWS_AS(table.expire_flows(20.0, 0.0), std::invalid_argument);
}

TEST_CASE("counter consistency and observation sanity over a simulated trace") {
    TraceConfig c;
    c.rate_qps = 200;
    c.duration = 20;
    const auto flows = generate_trace(c);
    std::vector<PacketEvent> stream;
    for (const auto& f : flows) {
        auto p = flow_to_packets(f);
        stamp_response(p, p.request_phase().back().time + f.work);
        stream.insert(stream.end(), p.events.begin(), p.events.end());
    }
    std::stable_sort(stream.begin(), stream.end(), [](auto& a, auto& b) { return a.time < b.time; });

    FlowTable table;
    std::array<std::int64_t, kNumCounters> sum{};
    std::map<std::uint64_t, double> pt_first;
    for (const auto& p : stream) {
        const auto out = table.on_packet(p, 0, p.time);
        for (std::size_t i = 0; i < kNumCounters; ++i) sum[i] += out.counters[i];
        CHECK(sum[index(Counter::kFin)] + sum[index(Counter::kRst)] <= sum[index(Counter::kSyn)]);
        CHECK(sum[index(Counter::kFlowOngoing)] == static_cast<std::int64_t>(table.size()));
        for (const auto& o : out.observed()) {
            CHECK(std::isfinite(o.value));
            CHECK(o.value >= 0.0);
            if (o.channel == Channel::kPtFirst) pt_first[p.flow_id] = o.value;
            if (o.channel == Channel::kFct && pt_first.contains(p.flow_id))
                CHECK(o.value >= pt_first[p.flow_id]);
        }
    }
    CHECK(sum[index(Counter::kSyn)] == static_cast<std::int64_t>(flows.size()));
    CHECK(sum[index(Counter::kFin)] == static_cast<std::int64_t>(flows.size()));
    CHECK(sum[index(Counter::kRetransmit)] == 0);
    CHECK(table.size() == 0);
    // Most flows do more than a millisecond of work, so the echo advances.
    CHECK(pt_first.size() > flows.size() * 9 / 10);
}

TEST_CASE("deterministic service time is measured within a tick plus rtt") {
    FlowRequest f;
    f.flow_id = 1;
    f.arrival_time = 0.5;
    f.work = 0.1;
    f.request_bytes = 500;
    f.response_bytes = 100000;
    auto p = flow_to_packets(f);
    Server server(ServerSpec{});
    const double t_req = p.request_phase().back().time;
    server.submit({1, f.work}, t_req);
    const auto done = server.advance(10.0);
    REQUIRE(done.size() == 1);
    stamp_response(p, done.front().time);
    FlowTable table;
    std::optional<double> measured;
    for (const auto& e : p.events) {
        const auto out = table.on_packet(e, 0, e.time);
        if (auto v = out.value(Channel::kPtFirst)) measured = v;
    }
    REQUIRE(measured);
    CHECK(std::abs(*measured - 0.1) <= kTimestampTick + kDefaultClientRtt);
}
