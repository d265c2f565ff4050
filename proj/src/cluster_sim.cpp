#include "aquarius/cluster_sim.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>
#include <string>

namespace aquarius {

namespace {

bool later(const auto& a, const auto& b) {
    if (a.finish_v != b.finish_v) return a.finish_v > b.finish_v;
    return a.order > b.order;
}

std::uint32_t parse_uint(std::string_view text, std::string_view what) {
    std::uint32_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end || text.empty())
        throw std::invalid_argument("bad " + std::string(what) + " '" + std::string(text) + "' in server groups");
    return v;
}

}  // namespace

void ServerSpec::validate() const {
    if (n_cpu < 1) throw std::invalid_argument("n_cpu must be >= 1");
    if (max_workers < 1) throw std::invalid_argument("max_workers must be >= 1");
}

std::vector<ServerSpec> parse_server_groups(std::string_view groups) {
    std::vector<ServerSpec> out;
    if (groups.empty()) throw std::invalid_argument("no servers configured");
    for (bool more = true; more;) {
        const auto comma = groups.find(',');
        auto item = groups.substr(0, comma);
        more = comma != std::string_view::npos;
        if (more) groups.remove_prefix(comma + 1);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        const auto x = item.find('x');
        if (x == std::string_view::npos)
            throw std::invalid_argument("server group '" + std::string(item) + "' is not <count>x<cores>");
        const auto count = parse_uint(item.substr(0, x), "count");
        const auto cores = parse_uint(item.substr(x + 1), "cores");
        if (count == 0 || cores == 0) throw std::invalid_argument("server group counts must be positive");
        for (std::uint32_t i = 0; i < count; ++i) {
            ServerSpec s;
            s.dip = static_cast<Dip>(out.size());
            s.n_cpu = cores;
            out.push_back(s);
        }
    }
    if (out.empty()) throw std::invalid_argument("no servers configured");
    return out;
}

Server::Server(const ServerSpec& spec) : spec_(spec) {
    spec_.validate();
    busy_.reserve(spec_.max_workers);
}

double Server::rate() const {
    if (busy_.empty()) return 0.0;
    return std::min(1.0, static_cast<double>(spec_.n_cpu) / static_cast<double>(busy_.size()));
}

void Server::admit(const Job& job) {
    busy_.push_back({virtual_ + job.work, order_++, job.flow_id});
    std::push_heap(busy_.begin(), busy_.end(), [](const auto& a, const auto& b) { return later(a, b); });
}

Admission Server::submit(const Job& job, double now) {
    if (!(job.work > 0.0)) throw std::invalid_argument("job work must be > 0");
    if (now < clock_) throw std::logic_error("submit in the past");
    if (now > clock_) run_until(now, pending_);

    if (busy_.size() < spec_.max_workers) {
        admit(job);
        return Admission::kAdmitted;
    }
    if (queue_.size() < spec_.backlog) {
        queue_.push_back(job);
        return Admission::kQueued;
    }
    ++resets_;
    return Admission::kRstOverflow;
}

std::vector<Completion> Server::advance(double until) {
    if (until < clock_) throw std::logic_error("advance into the past");
    std::vector<Completion> out;
    out.swap(pending_);
    run_until(until, out);
    return out;
}

void Server::run_until(double until, std::vector<Completion>& out) {
    const auto cmp = [](const auto& a, const auto& b) { return later(a, b); };
    while (!busy_.empty()) {
        const double r = rate();
        const double dt = (busy_.front().finish_v - virtual_) / r;
        const double in_service = std::min<double>(static_cast<double>(busy_.size()), spec_.n_cpu);
        if (clock_ + dt > until) break;

        clock_ += dt;
        delivered_ += dt * in_service;
        virtual_ = busy_.front().finish_v;
        std::pop_heap(busy_.begin(), busy_.end(), cmp);
        out.push_back({busy_.back().flow_id, spec_.dip, clock_});
        busy_.pop_back();

        if (!queue_.empty()) {
            admit(queue_.front());
            queue_.pop_front();
        }
    }
    if (until > clock_) {
        const double dt = until - clock_;
        virtual_ += dt * rate();
        delivered_ += dt * std::min<double>(static_cast<double>(busy_.size()), spec_.n_cpu);
        clock_ = until;
    }
}

std::optional<double> Server::next_completion_time() const {
    if (busy_.empty()) return std::nullopt;
    return clock_ + (busy_.front().finish_v - virtual_) / rate();
}

GroundTruth Server::ground_truth() const {
    GroundTruth g;
    g.dip = spec_.dip;
    g.time = clock_;
    g.n_cpu = spec_.n_cpu;
    g.busy_threads = static_cast<std::uint32_t>(busy_.size());
    g.cpu_usage = std::min<double>(g.busy_threads, spec_.n_cpu) / static_cast<double>(spec_.n_cpu);
    return g;
}

}  // namespace aquarius
