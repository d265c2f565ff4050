#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aquarius/packet_model.hpp"

using namespace aquarius;

namespace {

FlowRequest one_flow(std::uint64_t request_bytes, std::uint64_t response_bytes = 5000) {
    FlowRequest f;
    f.arrival_time = 1.0;
    f.flow_id = 9;
    f.work = 0.1;
    f.request_bytes = request_bytes;
    f.response_bytes = response_bytes;
    return f;
}

std::size_t count_kind(const FlowPackets& p, PacketKind k) {
    return std::count_if(p.events.begin(), p.events.end(), [&](const auto& e) { return e.kind == k; });
}

}  // namespace

TEST_CASE("file trace draws only the seven file sizes") {
    TraceConfig c;
    c.kind = TraceKind::kFile;
    c.rate_qps = 500;
    c.duration = 20;
    const auto flows = generate_trace(c);
    REQUIRE(flows.size() > 5000);
    for (const auto& f : flows) {
        CHECK(std::find(kFileSizes.begin(), kFileSizes.end(), f.response_bytes) != kFileSizes.end());
        CHECK(f.work == doctest::Approx(static_cast<double>(f.response_bytes) * kFileWorkPerByte));
    }
}

TEST_CASE("flow count over many seeds matches rate x duration") {
    TraceConfig c;
    c.rate_qps = 400;
    c.duration = 60;
    const int seeds = 1000;
    double sum = 0.0;
    for (int s = 1; s <= seeds; ++s) {
        c.seed = static_cast<std::uint64_t>(s);
        TraceGenerator g(c);
        std::size_t n = 0;
        while (g.next()) ++n;
        sum += static_cast<double>(n);
    }
    const double mean = sum / seeds;
    const double sigma = std::sqrt(24000.0 / seeds);  // std error of the mean of Poisson(24000)
    CHECK(std::abs(mean - 24000.0) < 3.0 * sigma);
}

TEST_CASE("same seed gives the same stream") {
    TraceConfig c;
    c.kind = TraceKind::kMixture;
    c.seed = 42;
    CHECK(generate_trace(c) == generate_trace(c));
    TraceConfig d = c;
    d.seed = 43;
    CHECK(generate_trace(c) != generate_trace(d));
}

TEST_CASE("stream invariants") {
    for (auto kind : {TraceKind::kPoissonForLoop, TraceKind::kFile, TraceKind::kMixture}) {
        TraceConfig c;
        c.kind = kind;
        c.duration = 30;
        const auto flows = generate_trace(c);
        for (std::size_t i = 0; i < flows.size(); ++i) {
            CHECK(flows[i].work > 0.0);
            CHECK(flows[i].request_bytes >= 1);
            CHECK(flows[i].flow_id == i + 1);
            CHECK(flows[i].arrival_time <= c.duration);
            if (i) CHECK(flows[i].arrival_time >= flows[i - 1].arrival_time);
        }
    }
}

TEST_CASE("inter-arrival mean converges to 1/rate") {
    TraceConfig c;
    c.rate_qps = 1000;
    c.duration = 1e9;
    TraceGenerator g(c);
    double last = 0.0, sum = 0.0;
    const int n = 100000;
    std::vector<double> work;
    for (int i = 0; i < n; ++i) {
        const auto f = g.next();
        REQUIRE(f);
        sum += f->arrival_time - last;
        last = f->arrival_time;
        work.push_back(f->work);
    }
    CHECK(std::abs(sum / n - 1e-3) / 1e-3 < 0.02);

    std::sort(work.begin(), work.end());
    const double mean = std::accumulate(work.begin(), work.end(), 0.0) / n;
    const double p99 = work[static_cast<std::size_t>(std::ceil(0.99 * n)) - 1];
    CHECK(p99 / mean > 4.0);
    CHECK(mean == doctest::Approx(kDefaultMeanWork).epsilon(0.02));
}

TEST_CASE("mixture mean work sits between the two populations") {
    TraceConfig c;
    c.kind = TraceKind::kMixture;
    c.duration = 200;
    const auto flows = generate_trace(c);
    double sum = 0.0;
    for (const auto& f : flows) sum += f.work;
    CHECK(sum / flows.size() == doctest::Approx(kDefaultMeanWork).epsilon(0.05));
}

TEST_CASE("trace config validation") {
    TraceConfig c;
    c.rate_qps = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.rate_qps = 2e5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TraceConfig{};
    c.duration = 0;
    CHECK_THROWS_AS(TraceGenerator{c}, std::invalid_argument);
    c = TraceConfig{};
    c.mean_work = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("trace kind names") {
    CHECK(parse_trace_kind("forloop") == TraceKind::kPoissonForLoop);
    CHECK(parse_trace_kind("file") == TraceKind::kFile);
    CHECK(parse_trace_kind("mixture") == TraceKind::kMixture);
    CHECK(to_string(TraceKind::kFile) == "file");
    CHECK_THROWS_AS(parse_trace_kind("wiki"), std::invalid_argument);
}

TEST_CASE("request data segmentation") {
    CHECK(count_kind(flow_to_packets(one_flow(1000), 1500), PacketKind::kData) == 1);
    CHECK(count_kind(flow_to_packets(one_flow(3000), 1500), PacketKind::kData) == 2);
    CHECK(count_kind(flow_to_packets(one_flow(3001), 1500), PacketKind::kData) == 3);
    CHECK(count_kind(flow_to_packets(one_flow(1), 536), PacketKind::kData) == 1);
    CHECK_THROWS_AS(flow_to_packets(one_flow(100), 535), std::invalid_argument);
}

TEST_CASE("packet sequence shape") {
    auto p = flow_to_packets(one_flow(2500, 40000));
    REQUIRE(p.events.size() >= 4);
    CHECK(p.events.front().kind == PacketKind::kSyn);
    CHECK(p.events.front().time == 1.0);
    CHECK(p.events.front().payload_bytes == 0);
    CHECK(p.events.front().ts_ecr == 0);
    CHECK(p.events.back().kind == PacketKind::kFin);
    std::uint64_t payload = 0;
    for (const auto& e : p.request_phase()) payload += e.payload_bytes;
    CHECK(payload == 2500);

    stamp_response(p, 1.3);
    const auto resp = p.response_phase();
    CHECK(resp.front().time == doctest::Approx(1.3 + kDefaultClientRtt));
    for (const auto& e : resp) CHECK(e.ts_ecr == timestamp_ticks(1.3));
    for (std::size_t i = 1; i < p.events.size(); ++i) CHECK(p.events[i].time >= p.events[i - 1].time);
    for (const auto& e : p.events) {
        CHECK(e.flow_id == 9);
        CHECK(e.ts_val == timestamp_ticks(e.time));
    }
}

TEST_CASE("timestamps") {
    CHECK(timestamp_ticks(0.0) == 1);
    CHECK(timestamp_ticks(0.0009) == 1);
    CHECK(timestamp_ticks(0.001) == 2);
    CHECK(timestamp_ticks(1.25) == 1251);
}

TEST_CASE("reset packet") {
    const auto r = make_reset(one_flow(10), 2.5);
    CHECK(r.kind == PacketKind::kRst);
    CHECK(r.time == 2.5);
    CHECK(r.payload_bytes == 0);
}

TEST_CASE("tuple image is 13 little-endian bytes") {
    FiveTuple t{0x0A000001, 0x1234, 0x0B000002, 80, 6};
    const auto b = t.bytes();
    CHECK(b[0] == 0x01);
    CHECK(b[3] == 0x0A);
    CHECK(b[4] == 0x34);
    CHECK(b[5] == 0x12);
    CHECK(b[12] == 6);
}
