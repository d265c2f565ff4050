#include "aquarius/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <queue>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "aquarius/cluster_sim.hpp"
#include "aquarius/dataplane.hpp"
#include "aquarius/parser.hpp"
#include "aquarius/telemetry.hpp"

#ifndef AQUARIUS_VERSION
#define AQUARIUS_VERSION "0.0.0"
#endif

namespace aquarius {

std::string_view version() { return AQUARIUS_VERSION; }

std::string_view to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::kOff: return "off";
        case EstimatorKind::kLinear: return "linear";
        case EstimatorKind::kOracle: return "oracle";
    }
    return "?";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
    if (name == "off") return EstimatorKind::kOff;
    if (name == "linear") return EstimatorKind::kLinear;
    if (name == "oracle") return EstimatorKind::kOracle;
    throw std::invalid_argument("unknown estimator '" + std::string(name) + "' (off, linear, oracle)");
}

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    try {
        trace.validate();
        const auto specs = parse_server_groups(servers);
        if (specs.size() > 4096) throw std::invalid_argument("at most 4096 servers per VIP");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(frame_ms > 0.0) || !(period_ms > 0.0)) throw ConfigError("frame_ms and period_ms must be > 0");
    if (!(frame_ms < period_ms)) throw ConfigError("frame_ms must be smaller than period_ms");
    if (!(client_rtt > 0.0) || client_rtt * 1e3 >= frame_ms) throw ConfigError("client_rtt must be in (0, frame)");
    if (mtu < 536) throw ConfigError("mtu must be >= 536");
    if (!(idle_timeout > 0.0)) throw ConfigError("idle_timeout must be > 0");
    if (!is_prime(table_size)) throw ConfigError("table_size must be prime");
    if (estimator == EstimatorKind::kLinear && model_path.empty())
        throw ConfigError("--estimator linear needs --model <coefficients file>");
    for (const auto* p : {&model_path, &stats_path}) {
        if (!p->empty() && !std::filesystem::is_regular_file(*p)) throw ConfigError("file not found: " + *p);
    }
}

nlohmann::json ExperimentConfig::to_json() const {
    return {
        {"trace",
         {{"kind", std::string(to_string(trace.kind))},
          {"rate", trace.rate_qps},
          {"mean_work", trace.mean_work},
          {"duration", trace.duration},
          {"vip", trace.vip}}},
        {"servers", servers},
        {"policy", std::string(to_string(policy))},
        {"estimator", std::string(to_string(estimator))},
        {"model", model_path},
        {"stats", stats_path},
        {"frame_ms", frame_ms},
        {"period_ms", period_ms},
        {"seed", seed},
        {"out", out_dir},
        {"client_rtt", client_rtt},
        {"mtu", mtu},
        {"idle_timeout", idle_timeout},
        {"table_size", table_size},
        {"collect_dataset", collect_dataset},
    };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "trace") {
                if (!v.is_object()) throw ConfigError("'trace' must be an object");
                for (const auto& [tk, tv] : v.items()) {
                    if (tk == "kind") c.trace.kind = parse_trace_kind(tv.get<std::string>());
                    else if (tk == "rate") c.trace.rate_qps = tv.get<double>();
                    else if (tk == "mean_work") c.trace.mean_work = tv.get<double>();
                    else if (tk == "duration") c.trace.duration = tv.get<double>();
                    else if (tk == "vip") c.trace.vip = tv.get<Vip>();
                    else throw ConfigError("unknown trace key '" + tk + "'");
                }
            } else if (key == "servers") c.servers = v.get<std::string>();
            else if (key == "policy") c.policy = parse_policy_kind(v.get<std::string>());
            else if (key == "estimator") c.estimator = parse_estimator_kind(v.get<std::string>());
            else if (key == "model") c.model_path = v.get<std::string>();
            else if (key == "stats") c.stats_path = v.get<std::string>();
            else if (key == "frame_ms") c.frame_ms = v.get<double>();
            else if (key == "period_ms") c.period_ms = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "out") c.out_dir = v.get<std::string>();
            else if (key == "client_rtt") c.client_rtt = v.get<double>();
            else if (key == "mtu") c.mtu = v.get<std::uint32_t>();
            else if (key == "idle_timeout") c.idle_timeout = v.get<double>();
            else if (key == "table_size") c.table_size = v.get<std::uint32_t>();
            else if (key == "collect_dataset") c.collect_dataset = v.get<bool>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.trace.seed = c.seed;
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------- aggregates

Aggregates Aggregates::from_series(const std::vector<WindowMetrics>& series) {
    Aggregates a;
    if (series.empty()) return a;
    const double n = static_cast<double>(series.size());
    double jain = 0.0, over = 0.0, cpu = 0.0, fct_sum = 0.0;
    for (const auto& w : series) {
        jain += w.jain_busy;
        over += w.overprovision_busy;
        cpu += w.mean_cpu;
        fct_sum += w.fct_mean * static_cast<double>(w.fct_count);
        a.fct_count += w.fct_count;
        a.rst_count += w.rst_count;
    }
    a.mean_jain = jain / n;
    a.mean_overprovision = over / n;
    a.mean_cpu = cpu / n;
    a.fct_mean = a.fct_count ? fct_sum / static_cast<double>(a.fct_count) : 0.0;
    return a;
}

double mean_work(const TraceConfig& trace) {
    if (trace.kind != TraceKind::kFile) return trace.mean_work;
    const double bytes = std::accumulate(kFileSizes.begin(), kFileSizes.end(), 0.0) / kFileSizes.size();
    return bytes * kFileWorkPerByte;
}

// ---------------------------------------------------------------- simulation

namespace {

enum class EventClass : std::uint8_t {
    kCompletion,  // server finished a job (versioned)
    kPacket,      // client packet reaches the LB
    kRequest,     // request fully delivered to the pinned server
    kArrival,
    kFrame,
    kTick,
};

struct Event {
    double time;
    EventClass cls;
    std::uint64_t order;
    std::uint64_t key;    // flow id, server index, or frame/tick number
    std::uint64_t aux;    // packet index or completion version

    bool operator>(const Event& o) const {
        if (time != o.time) return time > o.time;
        if (cls != o.cls) return cls > o.cls;
        return order > o.order;
    }
};

enum class FlowStatus : std::uint8_t { kActive, kDropped, kReset };

struct FlowRecord {
    FlowRequest flow;
    FlowPackets packets;
    Dip dip = 0;
    FlowStatus status = FlowStatus::kActive;
};

std::vector<std::uint32_t> cpu_weights(const std::vector<ServerSpec>& specs) {
    std::vector<std::uint32_t> w;
    w.reserve(specs.size());
    for (const auto& s : specs) w.push_back(std::clamp<std::uint32_t>(s.n_cpu, 1, ActionRegisters::kMaxWeight));
    return w;
}

class Simulation {
public:
    Simulation(const ExperimentConfig& config, Estimator* estimator_override)
        : config_(config),
          specs_(parse_server_groups(config.servers)),
          store_(VipStore::create(layout())),
          writer_(store_, config.seed ^ 0xA5A5A5A5DEADBEEFULL, 0.0),
          table_(config.trace.vip),
          generator_(trace_config()),
          frame_(config.frame_ms / 1e3),
          period_(config.period_ms / 1e3) {
        servers_.reserve(specs_.size());
        for (const auto& s : specs_) {
            servers_.emplace_back(s);
            store_.set_active(s.dip, true);
        }
        versions_.assign(specs_.size(), 0);
        policy_ = make_policy(config.policy, store_, cpu_weights(specs_), config.table_size);
        policy_->sync();
        plane_ = std::make_unique<DataPlane>(table_, writer_, *policy_);

        if (config.estimator != EstimatorKind::kOff) {
            if (estimator_override) {
                estimator_ = estimator_override;
            } else if (config.estimator == EstimatorKind::kOracle) {
                owned_estimator_ = std::make_unique<OracleEstimator>();
            } else {
                owned_estimator_ = std::make_unique<LinearEstimator>(load_coefficients(config.model_path));
            }
            if (owned_estimator_) estimator_ = owned_estimator_.get();
            loop_ = std::make_unique<ControlLoop>(std::vector<const VipStore*>{&store_}, store_.actions(),
                                                  *estimator_, ControlOptions{period_, frame_});
            loop_->add_policy(policy_.get());
            loop_->set_ground_truth_source([this](Dip dip, double) -> std::optional<GroundTruth> {
                if (dip >= servers_.size()) return std::nullopt;
                return servers_[dip].ground_truth();
            });
            if (!config.stats_path.empty()) loop_->set_stats(NormalizationStats::load(config.stats_path));
        }
        if (config.collect_dataset) export_reader_.emplace(store_, 1);
    }

    Report run() {
        if (auto f = generator_.next()) {
            next_flow_ = *f;
            schedule(f->arrival_time, EventClass::kArrival, 0, 0);
        }
        schedule(frame_time(1), EventClass::kFrame, 1, 0);
        if (loop_) schedule(tick_time(1), EventClass::kTick, 1, 0);

        const double end = config_.trace.duration;
        while (!queue_.empty() && queue_.top().time <= end + 1e-9) {
            const Event e = queue_.top();
            queue_.pop();
            now_ = e.time;
            dispatch(e);
        }
        return finish();
    }

private:
    StoreLayout layout() const {
        StoreLayout l;
        l.vip = config_.trace.vip;
        l.max_dips = static_cast<std::uint32_t>(specs_.size());
        return l;
    }

    TraceConfig trace_config() const {
        TraceConfig t = config_.trace;
        t.seed = config_.seed;
        return t;
    }

    double frame_time(std::uint64_t k) const { return static_cast<double>(k) * frame_; }
    double tick_time(std::uint64_t k) const { return static_cast<double>(k) * period_; }

    void schedule(double time, EventClass cls, std::uint64_t key, std::uint64_t aux) {
        queue_.push(Event{std::max(time, now_), cls, order_++, key, aux});
    }

    void dispatch(const Event& e) {
        switch (e.cls) {
            case EventClass::kCompletion:
                if (e.aux == versions_[e.key]) advance_server(e.key, now_);
                break;
            case EventClass::kPacket: on_packet(e.key, e.aux); break;
            case EventClass::kRequest: on_request(e.key); break;
            case EventClass::kArrival: on_arrival(); break;
            case EventClass::kFrame: on_frame(e.key); break;
            case EventClass::kTick: on_tick(e.key); break;
        }
    }

    void on_arrival() {
        const FlowRequest flow = next_flow_;
        ++totals_.generated;
        auto& rec = flows_[flow.flow_id];
        rec.flow = flow;
        rec.packets = flow_to_packets(flow, config_.mtu, config_.client_rtt);
        const auto request = rec.packets.request_phase();
        for (std::size_t i = 0; i < request.size(); ++i)
            schedule(request[i].time, EventClass::kPacket, flow.flow_id, i);
        schedule(request.back().time, EventClass::kRequest, flow.flow_id, 0);

        if (auto f = generator_.next()) {
            next_flow_ = *f;
            schedule(f->arrival_time, EventClass::kArrival, 0, 0);
        }
    }

    void on_packet(std::uint64_t flow_id, std::size_t index) {
        auto it = flows_.find(flow_id);
        if (it == flows_.end() || it->second.status == FlowStatus::kDropped) return;
        FlowRecord& rec = it->second;
        const PacketEvent& pkt = rec.packets.events[index];
        ++packets_;
        const auto dip = plane_->process(pkt, now_);
        if (pkt.kind == PacketKind::kSyn) {
            if (!dip) {
                rec.status = FlowStatus::kDropped;
                ++totals_.dropped;
                return;
            }
            rec.dip = *dip;
        } else if (pkt.kind == PacketKind::kFin) {
            const double fct = now_ - rec.flow.arrival_time;
            window_fct_.push_back(fct);
            all_fct_.push_back(fct);
            ++totals_.completed;
            flows_.erase(it);
        } else if (pkt.kind == PacketKind::kRst) {
            flows_.erase(it);
        }
    }

    void on_request(std::uint64_t flow_id) {
        auto it = flows_.find(flow_id);
        if (it == flows_.end()) return;
        FlowRecord& rec = it->second;
        if (rec.status == FlowStatus::kDropped) {
            flows_.erase(it);
            return;
        }
        advance_server(rec.dip, now_);
        const auto admission = servers_[rec.dip].submit(Job{flow_id, rec.flow.work}, now_);
        reschedule(rec.dip);
        if (admission == Admission::kRstOverflow) {
            rec.status = FlowStatus::kReset;
            ++totals_.reset;
            ++window_rst_;
            rec.packets.events.push_back(make_reset(rec.flow, now_ + config_.client_rtt));
            schedule(rec.packets.events.back().time, EventClass::kPacket, flow_id, rec.packets.events.size() - 1);
        }
    }

    void advance_server(std::size_t s, double until) {
        for (const auto& c : servers_[s].advance(until)) {
            auto it = flows_.find(c.flow_id);
            if (it == flows_.end()) continue;  // flow state lost (cannot happen while records outlive jobs)
            FlowRecord& rec = it->second;
            stamp_response(rec.packets, c.time, config_.mtu, config_.client_rtt);
            for (std::size_t i = rec.packets.response_begin; i < rec.packets.events.size(); ++i)
                schedule(rec.packets.events[i].time, EventClass::kPacket, c.flow_id, i);
        }
        reschedule(s);
    }

    void reschedule(std::size_t s) {
        ++versions_[s];
        if (auto t = servers_[s].next_completion_time()) schedule(*t, EventClass::kCompletion, s, versions_[s]);
    }

    void on_frame(std::uint64_t k) {
        for (std::size_t s = 0; s < servers_.size(); ++s) advance_server(s, now_);

        std::vector<double> busy(servers_.size());
        double cpu = 0.0;
        for (std::size_t s = 0; s < servers_.size(); ++s) {
            const auto gt = servers_[s].ground_truth();
            busy[s] = gt.busy_threads;
            cpu += gt.cpu_usage;
        }
        WindowMetrics w;
        w.time = now_;
        w.jain_busy = jain_fairness(busy);
        w.overprovision_busy = overprovision(busy);
        w.mean_cpu = cpu / static_cast<double>(servers_.size());
        const auto fs = fct_stats(window_fct_);
        w.fct_mean = fs.mean;
        w.fct_p90 = fs.p90;
        w.fct_p99 = fs.p99;
        w.fct_count = fs.count;
        w.rst_count = window_rst_;
        series_.push_back(w);
        window_fct_.clear();
        window_rst_ = 0;

        plane_->expire(now_, config_.idle_timeout);
        for (const auto& spec : specs_) writer_.publish_frame(spec.dip, now_);

        if (export_reader_) {
            for (const auto& [dip, frame] : export_reader_->fetch_latest(now_)) {
                dataset_.rows.push_back(export_reducers_[dip].reduce(frame, servers_[dip].ground_truth()));
            }
        }
        check_conservation();
        schedule(frame_time(k + 1), EventClass::kFrame, k + 1, 0);
    }

    void on_tick(std::uint64_t k) {
        for (std::size_t s = 0; s < servers_.size(); ++s) advance_server(s, now_);
        loop_->control_tick(now_);
        schedule(tick_time(k + 1), EventClass::kTick, k + 1, 0);
    }

    std::uint64_t in_flight() const {
        std::uint64_t n = 0;
        for (const auto& [id, rec] : flows_) n += rec.status == FlowStatus::kActive;
        return n;
    }

    void check_conservation() {
        const auto live = in_flight();
        if (totals_.generated != totals_.completed + totals_.reset + totals_.dropped + live) {
            throw InvariantViolation("flow conservation broken at t=" + std::to_string(now_) + ": generated " +
                                     std::to_string(totals_.generated) + " != completed " +
                                     std::to_string(totals_.completed) + " + reset " + std::to_string(totals_.reset) +
                                     " + dropped " + std::to_string(totals_.dropped) + " + in-flight " +
                                     std::to_string(live));
        }
        std::uint64_t resets = 0;
        for (const auto& s : servers_) resets += s.resets();
        if (resets != totals_.reset) throw InvariantViolation("server reset count disagrees with flow records");
    }

    Report finish() {
        check_conservation();
        Report r;
        r.config = config_;
        r.config.trace.seed = config_.seed;
        r.series = std::move(series_);
        r.aggregate = Aggregates::from_series(r.series);
        r.flows = totals_;
        r.flows.in_flight = in_flight();
        r.flow_fct = fct_stats(all_fct_);
        r.packets = packets_;
        r.anomalies = table_.anomalies();
        if (loop_) {
            r.control.ticks = loop_->ticks();
            r.control.applied = loop_->applied();
            r.control.faults = loop_->faults();
        }
        if (auto* tp = dynamic_cast<TablePolicy*>(policy_.get())) r.control.table_rebuilds = tp->rebuilds();
        r.dataset = std::move(dataset_);
        r.dataset.split_seed = config_.seed;
        r.dataset.sort();
        if (!r.dataset.rows.empty()) r.feature_stats = compute_stats(r.dataset.to_table(false));
        spdlog::info("run done: {} flows, {} completed, {} reset, mean jain {:.4f}, mean fct {:.4f}s",
                     r.flows.generated, r.flows.completed, r.flows.reset, r.aggregate.mean_jain,
                     r.aggregate.fct_mean);
        return r;
    }

    ExperimentConfig config_;
    std::vector<ServerSpec> specs_;
    std::vector<Server> servers_;
    std::vector<std::uint64_t> versions_;
    VipStore store_;
    FrameWriter writer_;
    FlowTable table_;
    std::unique_ptr<Policy> policy_;
    std::unique_ptr<DataPlane> plane_;
    std::unique_ptr<Estimator> owned_estimator_;
    Estimator* estimator_ = nullptr;
    std::unique_ptr<ControlLoop> loop_;
    std::optional<FrameReader> export_reader_;
    std::map<Dip, FrameReducer> export_reducers_;
    TraceGenerator generator_;
    FlowRequest next_flow_;
    double frame_;
    double period_;

    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
    std::uint64_t order_ = 0;
    double now_ = 0.0;

    std::unordered_map<std::uint64_t, FlowRecord> flows_;
    FlowTotals totals_;
    std::uint64_t packets_ = 0;
    std::vector<double> window_fct_;
    std::vector<double> all_fct_;
    std::uint64_t window_rst_ = 0;
    std::vector<WindowMetrics> series_;
    Dataset dataset_;
};

}  // namespace

Report run_experiment(const ExperimentConfig& config, Estimator* estimator_override) {
    config.validate();
    if (estimator_override && config.estimator == EstimatorKind::kOff)
        throw ConfigError("an estimator override needs the estimator enabled");
    Simulation sim(config, estimator_override);
    return sim.run();
}

double measure_saturation_rate(const ExperimentConfig& base, double duration) {
    ExperimentConfig c = base;
    c.policy = PolicyKind::kEcmp;
    c.estimator = EstimatorKind::kOff;
    c.collect_dataset = false;
    c.trace.duration = duration;
    double cores = 0.0;
    for (const auto& s : parse_server_groups(c.servers)) cores += s.n_cpu;
    c.trace.rate_qps = 2.0 * cores / mean_work(c.trace);
    const Report r = run_experiment(c);
    const double warmup = duration / 4.0;
    std::uint64_t done = 0;
    for (const auto& w : r.series) {
        if (w.time > warmup) done += w.fct_count;
    }
    return static_cast<double>(done) / (duration - warmup);
}

// ---------------------------------------------------------------- output

void write_metrics_csv(const std::vector<WindowMetrics>& series, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "time,jain_busy,overprovision_busy,mean_cpu,fct_mean,fct_p90,fct_p99,fct_count,rst_count\n";
    for (const auto& w : series) {
        out << format_double(w.time) << ',' << format_double(w.jain_busy) << ',' << format_double(w.overprovision_busy)
            << ',' << format_double(w.mean_cpu) << ',' << format_double(w.fct_mean) << ','
            << format_double(w.fct_p90) << ',' << format_double(w.fct_p99) << ',' << w.fct_count << ','
            << w.rst_count << '\n';
    }
}

nlohmann::json report_json(const Report& r) {
    nlohmann::json series = nlohmann::json::object();
    auto column = [&](const char* name, auto field) {
        auto arr = nlohmann::json::array();
        for (const auto& w : r.series) arr.push_back(w.*field);
        series[name] = std::move(arr);
    };
    column("time", &WindowMetrics::time);
    column("jain_busy", &WindowMetrics::jain_busy);
    column("overprovision_busy", &WindowMetrics::overprovision_busy);
    column("mean_cpu", &WindowMetrics::mean_cpu);
    column("fct_mean", &WindowMetrics::fct_mean);
    column("fct_p90", &WindowMetrics::fct_p90);
    column("fct_p99", &WindowMetrics::fct_p99);
    column("fct_count", &WindowMetrics::fct_count);
    column("rst_count", &WindowMetrics::rst_count);

    const auto& a = r.aggregate;
    return {
        {"version", std::string(version())},
        {"config", r.config.to_json()},
        {"windows", r.series.size()},
        {"series", std::move(series)},
        {"aggregate",
         {{"mean_jain_busy", a.mean_jain},
          {"mean_overprovision_busy", a.mean_overprovision},
          {"mean_cpu", a.mean_cpu},
          {"fct_mean", a.fct_mean},
          {"fct_count", a.fct_count},
          {"rst_count", a.rst_count}}},
        {"flows",
         {{"generated", r.flows.generated},
          {"completed", r.flows.completed},
          {"reset", r.flows.reset},
          {"dropped", r.flows.dropped},
          {"in_flight", r.flows.in_flight}}},
        {"fct", {{"mean", r.flow_fct.mean}, {"p90", r.flow_fct.p90}, {"p99", r.flow_fct.p99}, {"count", r.flow_fct.count}}},
        {"control",
         {{"ticks", r.control.ticks},
          {"applied", r.control.applied},
          {"faults", r.control.faults},
          {"table_rebuilds", r.control.table_rebuilds}}},
        {"packets", r.packets},
        {"anomalies", r.anomalies},
        {"dataset_rows", r.dataset.rows.size()},
    };
}

void write_report(const Report& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
        out << report_json(report).dump(2) << '\n';
    }
    write_metrics_csv(report.series, dir / "metrics.csv");
    if (!report.dataset.rows.empty()) {
        export_dataset(report.dataset, dir / "features.csv");
        if (report.feature_stats) report.feature_stats->save(dir / "features_stats.csv");
    }
}

}  // namespace aquarius
