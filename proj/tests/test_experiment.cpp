#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aquarius/experiment.hpp"

using namespace aquarius;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
    auto p = std::filesystem::path(AQUARIUS_TEST_TMP) / "experiment" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

ExperimentConfig small(double rate = 100.0, double duration = 10.0) {
    ExperimentConfig c;
    c.trace.rate_qps = rate;
    c.trace.duration = duration;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("smoke run") {
    const auto r = run_experiment(small());
    CHECK(r.series.size() == 200);
    CHECK(r.series.front().time == doctest::Approx(0.05));
    CHECK(r.flows.generated > 800);
    CHECK(r.flows.completed > 0);
    CHECK(r.flows.dropped == 0);
    CHECK(r.packets > r.flows.generated * 4);
    CHECK(r.anomalies == 0);
    CHECK(r.dataset.rows.size() == 200 * 10);
    REQUIRE(r.feature_stats);
    CHECK(r.feature_stats->names.size() == kNumFeatures);
    CHECK(r.control.ticks == 0);
}

TEST_CASE("runs are deterministic per seed") {
    const auto a = run_experiment(small(150, 5));
    const auto b = run_experiment(small(150, 5));
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t i = 0; i < a.series.size(); ++i) {
        CHECK(a.series[i].jain_busy == b.series[i].jain_busy);
        CHECK(a.series[i].fct_mean == b.series[i].fct_mean);
    }
    CHECK(report_json(a).dump() == report_json(b).dump());
    auto c = small(150, 5);
    c.seed = 2;
    CHECK(report_json(run_experiment(c)).dump() != report_json(a).dump());
}

TEST_CASE("aggregates are recomputable from the series") {
    auto c = small(160, 20);
    c.policy = PolicyKind::kAquarius;
    c.estimator = EstimatorKind::kOracle;
    const auto r = run_experiment(c);
    const auto again = Aggregates::from_series(r.series);
    CHECK(again.mean_jain == r.aggregate.mean_jain);
    CHECK(again.mean_overprovision == r.aggregate.mean_overprovision);
    CHECK(again.fct_mean == r.aggregate.fct_mean);
    CHECK(again.fct_count == r.aggregate.fct_count);
    CHECK(r.aggregate.fct_count == r.flows.completed);
    CHECK(r.flow_fct.count == r.flows.completed);
    CHECK(r.aggregate.fct_mean == doctest::Approx(r.flow_fct.mean).epsilon(1e-9));
    CHECK(r.control.ticks == 80);
    CHECK(r.control.applied > 70);
    CHECK(r.control.faults == 0);
    CHECK(r.control.table_rebuilds >= r.control.applied);
    for (const auto& w : r.series) {
        CHECK(w.jain_busy > 0.0);
        CHECK(w.jain_busy <= 1.0 + 1e-12);
        CHECK(w.overprovision_busy >= 1.0 - 1e-12);
        CHECK(w.mean_cpu >= 0.0);
        CHECK(w.mean_cpu <= 1.0 + 1e-12);
    }
}

TEST_CASE("flow conservation with overload resets") {
    auto c = small(600, 10);
    c.servers = "2x1";
    const auto r = run_experiment(c);
    const auto& f = r.flows;
    CHECK(f.reset > 0);
    CHECK(f.generated == f.completed + f.reset + f.dropped + f.in_flight);
    CHECK(r.aggregate.rst_count == f.reset);
}

TEST_CASE("config json round trip and errors") {
    auto c = small(123, 7);
    c.policy = PolicyKind::kMaglev;
    c.seed = 42;
    c.servers = "3x2";
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.trace.seed == 42);

    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"trace", {{"rat", 1}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"policy", "round-robin"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"seed", "x"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);

    auto bad = small();
    bad.frame_ms = 300;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small();
    bad.servers = "0x2";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small();
    bad.estimator = EstimatorKind::kLinear;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.model_path = "/nonexistent/model.csv";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small();
    bad.table_size = 1000;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small();
    bad.trace.rate_qps = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    OracleEstimator o;
    CHECK_THROWS_AS(run_experiment(small(), &o), ConfigError);
}

TEST_CASE("ecmp fct grows with offered load") {
    double prev = 0.0;
    for (double rate : {40.0, 80.0, 120.0, 160.0}) {
        auto c = small(rate, 30);
        c.collect_dataset = false;
        const auto r = run_experiment(c);
        CHECK(r.aggregate.fct_mean > prev);
        prev = r.aggregate.fct_mean;
    }
}

TEST_CASE("jain and overprovision move in opposite directions") {
    auto c = small(160, 30);
    c.collect_dataset = false;
    const auto r = run_experiment(c);
    std::vector<double> j, o;
    for (const auto& w : r.series) {
        j.push_back(w.jain_busy);
        o.push_back(w.overprovision_busy);
    }
    CHECK(spearman(j, o) < 0.0);
}

TEST_CASE("report files") {
    const auto dir = tmp_dir("files");
    const auto r = run_experiment(small(100, 3));
    write_report(r, dir);
    for (const char* f : {"report.json", "metrics.csv", "features.csv", "features.csv.meta.json", "features_stats.csv"})
        CHECK(std::filesystem::exists(dir / f));
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(j["windows"] == 60);
    CHECK(j["series"]["time"].size() == 60);
    CHECK(j["version"] == std::string(version()));
    std::istringstream csv(slurp(dir / "metrics.csv"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 61);
    const auto back = import_dataset(dir / "features.csv");
    CHECK(back.rows.size() == r.dataset.rows.size());
    CHECK(back.split_seed == 1);

    const auto dir2 = tmp_dir("no_dataset");
    auto c = small(100, 3);
    c.collect_dataset = false;
    write_report(run_experiment(c), dir2);
    CHECK_FALSE(std::filesystem::exists(dir2 / "features.csv"));
}

TEST_CASE("saturation is below nominal capacity") {
    const double s = measure_saturation_rate(ExperimentConfig{}, 10.0);
    double cores = 0;
    for (const auto& sp : parse_server_groups("6x2,4x4")) cores += sp.n_cpu;
    CHECK(s > 0.5 * cores / kDefaultMeanWork);
    CHECK(s < 1.05 * cores / kDefaultMeanWork);
}
