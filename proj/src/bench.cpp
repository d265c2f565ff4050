#include "aquarius/bench.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <json.hpp>

#include "aquarius/dataplane.hpp"
#include "aquarius/packet_model.hpp"

namespace aquarius {

namespace {

std::vector<PacketEvent> bench_stream(const BenchConfig& config) {
    TraceConfig trace;
    trace.rate_qps = 2000.0;
    trace.duration = static_cast<double>(config.flows) / trace.rate_qps * 2.0;
    trace.seed = config.seed;
    TraceGenerator gen(trace);

    std::vector<PacketEvent> stream;
    for (std::uint64_t i = 0; i < config.flows; ++i) {
        auto flow = gen.next();
        if (!flow) break;
        auto packets = flow_to_packets(*flow);
        const double emit = packets.request_phase().back().time + flow->work;
        stamp_response(packets, emit);
        stream.insert(stream.end(), packets.events.begin(), packets.events.end());
    }
    std::stable_sort(stream.begin(), stream.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    return stream;
}

}  // namespace

BenchResult run_bench(const BenchConfig& config) {
    if (config.servers == 0 || config.repeats == 0 || config.flows == 0 || !(config.frame > 0.0))
        throw std::invalid_argument("bench needs servers, repeats, flows and frame > 0");
    const auto stream = bench_stream(config);

    BenchResult result;
    result.packets = stream.size();
    for (std::uint32_t rep = 0; rep <= config.repeats; ++rep) {
        StoreLayout layout;
        layout.max_dips = config.servers;
        VipStore store = VipStore::create(layout);
        for (Dip d = 0; d < config.servers; ++d) store.set_active(d, true);
        FrameWriter writer(store, config.seed);
        FlowTable table(0, config.flows);
        EcmpPolicy policy(store);
        DataPlane plane(table, writer, policy);

        std::uint64_t frames = 0;
        double next_frame = config.frame;
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& pkt : stream) {
            while (pkt.time >= next_frame) {
                for (Dip d = 0; d < config.servers; ++d) writer.publish_frame(d, next_frame);
                ++frames;
                next_frame += config.frame;
            }
            plane.process(pkt, pkt.time);
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.frames = frames;
        if (rep == 0) continue;  // warm-up
        const double ns = std::chrono::duration<double, std::nano>(t1 - t0).count();
        result.ns_per_packet.push_back(ns / static_cast<double>(stream.size()));
    }
    const auto& v = result.ns_per_packet;
    double sum = 0.0;
    for (double x : v) sum += x;
    result.mean_ns = sum / static_cast<double>(v.size());
    result.min_ns = *std::min_element(v.begin(), v.end());
    result.max_ns = *std::max_element(v.begin(), v.end());
    return result;
}

std::string to_json(const BenchResult& r) {
    nlohmann::json j = {
        {"packets", r.packets}, {"frames", r.frames},   {"ns_per_packet", r.ns_per_packet},
        {"mean_ns", r.mean_ns}, {"min_ns", r.min_ns}, {"max_ns", r.max_ns},
    };
    return j.dump();
}

}  // namespace aquarius
