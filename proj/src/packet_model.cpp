#include "aquarius/packet_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace aquarius {

namespace {

// 10 Gb/s client link: spacing of consecutive client segments.
constexpr double kLinkBitsPerSecond = 10e9;
constexpr std::size_t kMaxResponseAcks = 64;
constexpr std::uint64_t kMinRequestBytes = 200;
constexpr std::uint64_t kMaxRequestBytes = 800;

double segment_gap(std::uint32_t bytes) { return static_cast<double>(bytes) * 8.0 / kLinkBitsPerSecond; }

std::size_t response_ack_count(std::uint64_t response_bytes, std::uint32_t mtu) {
    // Delayed ACK: one ACK every two full segments.
    const std::uint64_t per_ack = 2ULL * mtu;
    const auto n = static_cast<std::size_t>((response_bytes + per_ack - 1) / per_ack);
    return std::clamp<std::size_t>(n, 1, kMaxResponseAcks);
}

}  // namespace

std::array<std::uint8_t, 13> FiveTuple::bytes() const {
    std::array<std::uint8_t, 13> out{};
    auto put = [&out](std::size_t at, std::uint64_t v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
    };
    put(0, src_ip, 4);
    put(4, src_port, 2);
    put(6, dst_vip, 4);
    put(10, dst_port, 2);
    put(12, proto, 1);
    return out;
}

std::string_view to_string(PacketKind kind) {
    switch (kind) {
        case PacketKind::kSyn: return "SYN";
        case PacketKind::kAck: return "ACK";
        case PacketKind::kData: return "DATA";
        case PacketKind::kFin: return "FIN";
        case PacketKind::kRst: return "RST";
    }
    return "?";
}

std::string_view to_string(TraceKind kind) {
    switch (kind) {
        case TraceKind::kPoissonForLoop: return "forloop";
        case TraceKind::kFile: return "file";
        case TraceKind::kMixture: return "mixture";
    }
    return "?";
}

TraceKind parse_trace_kind(std::string_view name) {
    if (name == "forloop") return TraceKind::kPoissonForLoop;
    if (name == "file") return TraceKind::kFile;
    if (name == "mixture") return TraceKind::kMixture;
    throw std::invalid_argument("unknown trace kind '" + std::string(name) + "'");
}

void TraceConfig::validate() const {
    if (!(rate_qps > 0.0) || rate_qps > kMaxRateQps)
        throw std::invalid_argument("rate_qps must be in (0, " + std::to_string(kMaxRateQps) + "]");
    if (!(duration > 0.0)) throw std::invalid_argument("duration must be > 0");
    if (!(mean_work > 0.0)) throw std::invalid_argument("mean_work must be > 0");
    if (!(mixture_light_factor > 0.0) || !(mixture_heavy_factor > 0.0))
        throw std::invalid_argument("mixture factors must be > 0");
    if (mixture_heavy_share < 0.0 || mixture_heavy_share > 1.0)
        throw std::invalid_argument("mixture_heavy_share must be in [0, 1]");
}

TraceGenerator::TraceGenerator(const TraceConfig& config) : config_(config), rng_(config.seed) {
    config_.validate();
}

FiveTuple TraceGenerator::draw_tuple() {
    std::uniform_int_distribution<std::uint32_t> host(1, 0x00FFFFFE);
    std::uniform_int_distribution<std::uint32_t> port(32768, 60999);
    FiveTuple t;
    t.src_ip = 0x0A000000u | host(rng_);  // 10.0.0.0/8 clients
    t.src_port = static_cast<std::uint16_t>(port(rng_));
    t.dst_vip = config_.vip;
    t.dst_port = 80;
    t.proto = 6;
    return t;
}

std::optional<FlowRequest> TraceGenerator::next() {
    if (exhausted_) return std::nullopt;
    std::exponential_distribution<double> gap(config_.rate_qps);
    clock_ += gap(rng_);
    if (clock_ > config_.duration) {
        exhausted_ = true;
        return std::nullopt;
    }

    FlowRequest flow;
    flow.arrival_time = clock_;
    flow.flow_id = next_id_++;
    flow.tuple = draw_tuple();
    flow.request_bytes = std::uniform_int_distribution<std::uint64_t>(kMinRequestBytes, kMaxRequestBytes)(rng_);

    auto for_loop_reply = [&](double mean) {
        std::exponential_distribution<double> work(1.0 / mean);
        do {
            flow.work = work(rng_);
        } while (!(flow.work > 0.0));
        flow.response_bytes =
            std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(flow.work * kForLoopBytesPerCoreSecond)));
    };

    switch (config_.kind) {
        case TraceKind::kPoissonForLoop:
            for_loop_reply(config_.mean_work);
            break;
        case TraceKind::kFile: {
            std::uniform_int_distribution<std::size_t> pick(0, kFileSizes.size() - 1);
            flow.response_bytes = kFileSizes[pick(rng_)];
            flow.work = static_cast<double>(flow.response_bytes) * kFileWorkPerByte;
            break;
        }
        case TraceKind::kMixture: {
            const bool heavy = std::bernoulli_distribution(config_.mixture_heavy_share)(rng_);
            for_loop_reply(config_.mean_work * (heavy ? config_.mixture_heavy_factor : config_.mixture_light_factor));
            break;
        }
    }
    return flow;
}

std::vector<FlowRequest> generate_trace(const TraceConfig& config) {
    TraceGenerator gen(config);
    std::vector<FlowRequest> out;
    while (auto f = gen.next()) out.push_back(*f);
    return out;
}

std::uint32_t timestamp_ticks(double time) {
    return static_cast<std::uint32_t>(std::floor(time / kTimestampTick)) + 1;
}

FlowPackets flow_to_packets(const FlowRequest& flow, std::uint32_t mtu_bytes, double client_rtt) {
    if (mtu_bytes < 536) throw std::invalid_argument("mtu_bytes must be >= 536");

    FlowPackets out;
    const double t0 = flow.arrival_time;
    const double t_req = t0 + client_rtt;
    // The SYN-ACK leaves the server when the SYN arrives and is echoed by the
    // handshake ACK.
    const std::uint32_t synack_ts = timestamp_ticks(t0);

    auto make = [&](double t, PacketKind kind, std::uint32_t payload, std::uint32_t ecr) {
        PacketEvent p;
        p.time = t;
        p.flow_id = flow.flow_id;
        p.tuple = flow.tuple;
        p.kind = kind;
        p.payload_bytes = payload;
        p.ts_val = timestamp_ticks(t);
        p.ts_ecr = ecr;
        return p;
    };

    out.events.push_back(make(t0, PacketKind::kSyn, 0, 0));
    out.events.push_back(make(t_req, PacketKind::kAck, 0, synack_ts));

    const std::uint64_t n_data = (flow.request_bytes + mtu_bytes - 1) / mtu_bytes;
    std::uint64_t left = flow.request_bytes;
    for (std::uint64_t i = 0; i < n_data; ++i) {
        const auto payload = static_cast<std::uint32_t>(std::min<std::uint64_t>(left, mtu_bytes));
        left -= payload;
        out.events.push_back(make(t_req + static_cast<double>(i) * segment_gap(mtu_bytes), PacketKind::kData, payload,
                                  synack_ts));
    }
    out.response_begin = out.events.size();

    const std::size_t n_acks = response_ack_count(flow.response_bytes, mtu_bytes);
    for (std::size_t i = 0; i < n_acks; ++i) out.events.push_back(make(t0, PacketKind::kAck, 0, 0));
    out.events.push_back(make(t0, PacketKind::kFin, 0, 0));
    return out;
}

void stamp_response(FlowPackets& packets, double server_emit_time, std::uint32_t mtu_bytes, double client_rtt) {
    const std::uint32_t echo = timestamp_ticks(server_emit_time);
    const double gap = segment_gap(2 * mtu_bytes);
    double t = server_emit_time + client_rtt;
    for (auto& p : packets.response_phase()) {
        p.time = t;
        p.ts_val = timestamp_ticks(t);
        p.ts_ecr = echo;
        t += gap;
    }
}

PacketEvent make_reset(const FlowRequest& flow, double time) {
    PacketEvent p;
    p.time = time;
    p.flow_id = flow.flow_id;
    p.tuple = flow.tuple;
    p.kind = PacketKind::kRst;
    p.ts_val = timestamp_ticks(time);
    return p;
}

}  // namespace aquarius
