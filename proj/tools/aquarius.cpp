// aquarius run | bench | export | saturation
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "aquarius/bench.hpp"
#include "aquarius/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("aquarius");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("AQUARIUS_LOG"); env && *env) spdlog::cfg::helpers::load_levels(env);
}

struct RunArgs {
    std::string config_file;
    std::string trace = "forloop";
    double rate = 100.0;
    double duration = 10.0;
    double mean_work = aquarius::kDefaultMeanWork;
    std::string servers = "6x2,4x4";
    std::string policy = "ecmp";
    std::string estimator = "off";
    std::string model;
    std::string stats;
    double frame_ms = 50.0;
    double period_ms = 250.0;
    std::uint64_t seed = 1;
    std::string out = "out";
    bool no_dataset = false;
};

void add_run_options(CLI::App* cmd, RunArgs& a) {
    cmd->add_option("--config", a.config_file, "JSON experiment config; explicit flags override it");
    cmd->add_option("--trace", a.trace, "forloop, file or mixture")->check(CLI::IsMember({"forloop", "file", "mixture"}));
    cmd->add_option("--rate", a.rate, "offered load, queries per second");
    cmd->add_option("--duration", a.duration, "simulated seconds");
    cmd->add_option("--mean-work", a.mean_work, "mean core-seconds per for-loop query");
    cmd->add_option("--servers", a.servers, "server groups, e.g. 6x2,4x4");
    cmd->add_option("--policy", a.policy, "ecmp, wcmp, maglev or aquarius")
        ->check(CLI::IsMember({"ecmp", "wcmp", "maglev", "aquarius"}));
    cmd->add_option("--estimator", a.estimator, "off, linear or oracle")
        ->check(CLI::IsMember({"off", "linear", "oracle"}));
    cmd->add_option("--model", a.model, "coefficients file for --estimator linear");
    cmd->add_option("--stats", a.stats, "feature normalization stats (name,mean,std)");
    cmd->add_option("--frame-ms", a.frame_ms, "telemetry frame interval");
    cmd->add_option("--period-ms", a.period_ms, "control period");
    cmd->add_option("--seed", a.seed, "random seed");
    cmd->add_option("--out", a.out, "output directory");
}

aquarius::ExperimentConfig build_config(const CLI::App* cmd, const RunArgs& a) {
    using namespace aquarius;
    ExperimentConfig c;
    if (!a.config_file.empty()) c = ExperimentConfig::load(a.config_file);
    const auto given = [&](const char* flag) { return a.config_file.empty() || cmd->count(flag) > 0; };
    try {
        if (given("--trace")) c.trace.kind = parse_trace_kind(a.trace);
        if (given("--policy")) c.policy = parse_policy_kind(a.policy);
        if (given("--estimator")) c.estimator = parse_estimator_kind(a.estimator);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (given("--rate")) c.trace.rate_qps = a.rate;
    if (given("--duration")) c.trace.duration = a.duration;
    if (given("--mean-work")) c.trace.mean_work = a.mean_work;
    if (given("--servers")) c.servers = a.servers;
    if (given("--model")) c.model_path = a.model;
    if (given("--stats")) c.stats_path = a.stats;
    if (given("--frame-ms")) c.frame_ms = a.frame_ms;
    if (given("--period-ms")) c.period_ms = a.period_ms;
    if (given("--seed")) c.seed = a.seed;
    if (given("--out")) c.out_dir = a.out;
    if (c.out_dir.empty()) c.out_dir = "out";
    c.trace.seed = c.seed;
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();

    CLI::App app{"aquarius: feature-driven layer-4 load balancing simulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(aquarius::version()));

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "closed-loop experiment; writes report.json, metrics.csv, features.csv");
    add_run_options(run, run_args);
    run->add_flag("--no-dataset", run_args.no_dataset, "skip the features.csv export");

    RunArgs export_args;
    auto* exp = app.add_subcommand("export", "dataset-only run; writes features.csv and its stats");
    add_run_options(exp, export_args);

    RunArgs sat_args;
    auto* sat = app.add_subcommand("saturation", "measure the ECMP saturation throughput of a cluster");
    add_run_options(sat, sat_args);

    aquarius::BenchConfig bench_cfg;
    bool bench_json = false;
    auto* bench = app.add_subcommand("bench", "per-packet parser + telemetry cost");
    bench->add_option("--flows", bench_cfg.flows, "flows in the replayed stream");
    bench->add_option("--servers", bench_cfg.servers, "backends");
    bench->add_option("--repeats", bench_cfg.repeats, "timed passes");
    bench->add_option("--seed", bench_cfg.seed, "random seed");
    bench->add_flag("--json", bench_json, "print one JSON object");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            auto config = build_config(run, run_args);
            config.collect_dataset = !run_args.no_dataset;
            const auto report = aquarius::run_experiment(config);
            aquarius::write_report(report, config.out_dir);
            std::cout << "wrote " << config.out_dir << " (" << report.series.size() << " windows, mean jain "
                      << report.aggregate.mean_jain << ", mean fct " << report.aggregate.fct_mean << " s)\n";
        } else if (*exp) {
            auto config = build_config(exp, export_args);
            config.collect_dataset = true;
            const auto report = aquarius::run_experiment(config);
            std::filesystem::create_directories(config.out_dir);
            const std::filesystem::path dir = config.out_dir;
            aquarius::export_dataset(report.dataset, dir / "features.csv");
            if (report.feature_stats) report.feature_stats->save(dir / "features_stats.csv");
            std::cout << "wrote " << report.dataset.rows.size() << " rows to " << (dir / "features.csv").string()
                      << "\n";
        } else if (*sat) {
            const auto config = build_config(sat, sat_args);
            const double rate = aquarius::measure_saturation_rate(config, config.trace.duration);
            std::cout << rate << "\n";
        } else if (*bench) {
            const auto r = aquarius::run_bench(bench_cfg);
            if (bench_json) {
                std::cout << aquarius::to_json(r) << "\n";
            } else {
                std::cout << "packets per pass: " << r.packets << "\nframes per pass: " << r.frames
                          << "\nmean ns/packet: " << r.mean_ns << "\nmin ns/packet: " << r.min_ns
                          << "\nmax ns/packet: " << r.max_ns << "\n";
            }
        }
    } catch (const aquarius::ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kExitConfig;
    } catch (const aquarius::InvariantViolation& e) {
        spdlog::critical("invariant violation: {}", e.what());
        return kExitInvariant;
    } catch (const std::invalid_argument& e) {
        spdlog::error("config error: {}", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return kExitOk;
}
