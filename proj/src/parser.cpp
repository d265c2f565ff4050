#include "aquarius/parser.hpp"

namespace aquarius {

namespace {

void emit(ParseOutput& out, Vip vip, Channel channel, double value, double now) {
    out.observations[out.n_observations++] = {vip, out.dip, channel, value, now};
}

void bump(ParseOutput& out, Counter c, std::int64_t delta = 1) { out.counters[index(c)] += delta; }

}  // namespace

std::optional<double> ParseOutput::value(Channel c) const {
    for (const auto& o : observed()) {
        if (o.channel == c) return o.value;
    }
    return std::nullopt;
}

std::optional<double> estimate_processing_time(FlowState& fs, const PacketEvent& ack, double now) {
    if (!fs.awaiting_response || !fs.t_last_request) return std::nullopt;
    if (ack.ts_ecr <= fs.last_seen_ts_ecr) return std::nullopt;
    fs.last_seen_ts_ecr = ack.ts_ecr;
    fs.awaiting_response = false;
    return now - *fs.t_last_request;
}

FlowTable::FlowTable(Vip vip, std::size_t expected_flows) : vip_(vip) { flows_.reserve(expected_flows); }

std::optional<Dip> FlowTable::lookup(std::uint64_t flow_id) const {
    auto it = flows_.find(flow_id);
    if (it == flows_.end()) return std::nullopt;
    return it->second.dip;
}

const FlowState* FlowTable::find(std::uint64_t flow_id) const {
    auto it = flows_.find(flow_id);
    return it == flows_.end() ? nullptr : &it->second;
}

std::int64_t& FlowTable::ongoing_ref(Dip dip) {
    if (dip >= ongoing_.size()) {
        ongoing_.resize(dip + 1, 0);
        last_syn_.resize(dip + 1);
    }
    return ongoing_[dip];
}

std::int64_t FlowTable::ongoing(Dip dip) const { return dip < ongoing_.size() ? ongoing_[dip] : 0; }

ParseOutput FlowTable::on_packet(const PacketEvent& pkt, Dip dip, double now) {
    ParseOutput out;
    on_packet(pkt, dip, now, out);
    return out;
}

void FlowTable::on_packet(const PacketEvent& pkt, Dip dip, double now, ParseOutput& out) {
    out.counters.fill(0);
    out.n_observations = 0;
    out.known_flow = true;
    out.dip = dip;

    auto it = flows_.find(pkt.flow_id);
    if (it != flows_.end()) out.dip = it->second.dip;
    bump(out, Counter::kPkt);
    bump(out, Counter::kByte, pkt.payload_bytes);

    if (pkt.kind == PacketKind::kSyn) {
        if (it != flows_.end()) {
            // Duplicate SYN: a client retransmission.
            bump(out, Counter::kRetransmit);
            ++anomalies_;
            it->second.t_last_pkt = now;
            ++it->second.pkts_in;
            return;
        }
        FlowState fs;
        fs.flow_id = pkt.flow_id;
        fs.vip = vip_;
        fs.dip = dip;
        fs.t_syn = now;
        fs.t_last_pkt = now;
        fs.last_seen_ts_ecr = pkt.ts_ecr;
        fs.pkts_in = 1;
        flows_.emplace(pkt.flow_id, fs);

        auto& ongoing = ongoing_ref(dip);
        ++ongoing;
        bump(out, Counter::kSyn);
        bump(out, Counter::kFlowOngoing);
        auto& last = last_syn_[dip];
        if (last) emit(out, vip_, Channel::kFlowIat, now - *last, now);
        last = now;
        return;
    }

    if (it == flows_.end()) {
        bump(out, Counter::kRetransmit);
        ++anomalies_;
        out.known_flow = false;
        return;
    }

    FlowState& fs = it->second;
    emit(out, vip_, Channel::kPktIat, now - fs.t_last_pkt, now);
    fs.t_last_pkt = now;
    ++fs.pkts_in;
    fs.bytes_in += pkt.payload_bytes;

    const std::uint64_t request_bytes = fs.request_bytes;
    if (auto pt = estimate_processing_time(fs, pkt, now)) {
        emit(out, vip_, fs.pt_samples == 0 ? Channel::kPtFirst : Channel::kPtGeneral, *pt, now);
        emit(out, vip_, Channel::kRequestBytes, static_cast<double>(request_bytes), now);
        ++fs.pt_samples;
        fs.request_bytes = 0;
    } else if (pkt.ts_ecr > fs.last_seen_ts_ecr && !fs.awaiting_response) {
        fs.last_seen_ts_ecr = pkt.ts_ecr;
    }

    switch (pkt.kind) {
        case PacketKind::kData:
            if (pkt.payload_bytes > 0) {
                emit(out, vip_, Channel::kBytesPerPkt, pkt.payload_bytes, now);
                if (!fs.t_first_data) {
                    fs.t_first_data = now;
                    emit(out, vip_, Channel::kSynToFirstData, now - fs.t_syn, now);
                }
                fs.awaiting_response = true;
                fs.t_last_request = now;
                fs.request_bytes += pkt.payload_bytes;
            }
            break;
        case PacketKind::kAck:
            if (fs.t_last_ack) emit(out, vip_, Channel::kAckGap, now - *fs.t_last_ack, now);
            fs.t_last_ack = now;
            break;
        case PacketKind::kFin:
        case PacketKind::kRst:
            close(it, pkt, now, out);
            break;
        case PacketKind::kSyn:
            break;
    }
}

void FlowTable::close(std::unordered_map<std::uint64_t, FlowState>::iterator it, const PacketEvent& pkt, double now,
                      ParseOutput& out) {
    const FlowState& fs = it->second;
    auto& ongoing = ongoing_ref(fs.dip);
    emit(out, vip_, Channel::kFlowDuration, now - fs.t_syn, now);
    if (pkt.kind == PacketKind::kFin) {
        bump(out, Counter::kFin);
        if (fs.pt_samples > 0) bump(out, Counter::kFlowComplete);
        emit(out, vip_, Channel::kFct, now - fs.t_syn, now);
        emit(out, vip_, Channel::kBytesPerFlow, static_cast<double>(fs.bytes_in), now);
        emit(out, vip_, Channel::kPktsPerFlow, static_cast<double>(fs.pkts_in), now);
        emit(out, vip_, Channel::kOngoingAtComplete, static_cast<double>(ongoing), now);
    } else {
        bump(out, Counter::kRst);
    }
    --ongoing;
    bump(out, Counter::kFlowOngoing, -1);
    flows_.erase(it);
}

std::size_t FlowTable::expire_flows(double now, double idle_timeout) {
    return expire_flows(now, idle_timeout, [](Dip) {});
}

}  // namespace aquarius
