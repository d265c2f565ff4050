#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "aquarius/estimator.hpp"

using namespace aquarius;

namespace {

std::filesystem::path tmp_dir() {
    auto p = std::filesystem::path(AQUARIUS_TEST_TMP) / "estimator";
    std::filesystem::create_directories(p);
    return p;
}

void write_coefficients(const std::filesystem::path& path, double bias, double each,
                        const std::vector<std::string>& skip = {}, const std::vector<std::string>& extra = {}) {
    std::ofstream out(path);
    out << "name,value\n__bias__," << bias << '\n';
    for (const auto& n : feature_names()) {
        if (std::find(skip.begin(), skip.end(), n) == skip.end()) out << n << ',' << each << '\n';
    }
    for (const auto& n : extra) out << n << ",1\n";
}

VipStore store_with(std::uint32_t n) {
    StoreLayout l;
    l.max_dips = n;
    l.reservoir_capacity = 8;
    auto s = VipStore::create(l);
    for (Dip d = 0; d < n; ++d) s.set_active(d, true);
    return s;
}

class Faulty final : public Estimator {
public:
    double predict(const EstimatorInput&) override { throw std::runtime_error("boom"); }
    std::string describe() const override { return "faulty"; }
};

class Constant final : public Estimator {
public:
    explicit Constant(std::map<Dip, double> v) : v_(std::move(v)) {}
    double predict(const EstimatorInput& in) override { return v_.at(in.frame.dip); }
    std::string describe() const override { return "constant"; }

private:
    std::map<Dip, double> v_;
};

}  // namespace

TEST_CASE("linear estimator from a coefficients file") {
    const auto dir = tmp_dir();
    write_coefficients(dir / "zero.csv", 3.0, 0.0);
    auto est = load_coefficients(dir / "zero.csv");
    std::array<double, kNumFeatures> x{};
    std::mt19937_64 rng(1);
    for (auto& v : x) v = static_cast<double>(rng() % 100);
    CHECK(est.predict(x) == 3.0);

    write_coefficients(dir / "half.csv", 1.0, 0.5);
    auto half = load_coefficients(dir / "half.csv");
    double sum = 0;
    for (double v : x) sum += v;
    CHECK(half.predict(x) == doctest::Approx(1.0 + 0.5 * sum));
    const std::vector<double> short_x(5, 0.0);
    CHECK_THROWS_AS(half.predict(short_x), std::invalid_argument);
}

TEST_CASE("missing and unknown coefficient names are reported together") {
    const auto dir = tmp_dir();
    write_coefficients(dir / "bad.csv", 0.0, 1.0, {"n_syn", "fct_avg"}, {"bogus"});
    try {
        load_coefficients(dir / "bad.csv");
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("n_syn") != std::string::npos);
        CHECK(msg.find("fct_avg") != std::string::npos);
        CHECK(msg.find("bogus") != std::string::npos);
    }
    CHECK_THROWS(load_coefficients(dir / "nope.csv"));
    std::ofstream(dir / "garbage.csv") << "__bias__,abc\n";
    CHECK_THROWS(load_coefficients(dir / "garbage.csv"));
}

TEST_CASE("oracle needs ground truth") {
    OracleEstimator o;
    ReducedFrame f;
    std::array<double, kNumFeatures> x{};
    CHECK_THROWS(o.predict({f, x}));
    f.ground_truth = GroundTruth{0, 0.0, 2, 1.0, 17};
    CHECK(o.predict({f, x}) == 17.0);
}

TEST_CASE("weights from predictions") {
    CHECK(weights_from_predictions({}).empty());
    const auto w = weights_from_predictions({{0, 0.0}, {1, 9.0}});
    CHECK(w.at(0) == 64);
    CHECK(w.at(1) == 6);  // round(64 * 1 / 10)
    const auto eq = weights_from_predictions({{0, 3.0}, {1, 3.0}, {2, 3.0}});
    for (auto [d, v] : eq) CHECK(v == 64);
    CHECK(weights_from_predictions({{0, 0.0}, {1, 1000.0}}).at(1) == 1);
    CHECK_THROWS_AS(weights_from_predictions({{0, NAN}}), std::invalid_argument);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 40.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::map<Dip, double> p;
        for (Dip d = 0; d < 12; ++d) p[d] = u(rng);
        const auto ws = weights_from_predictions(p);
        for (auto [a, pa] : p) {
            CHECK(ws.at(a) >= 1);
            CHECK(ws.at(a) <= 64);
            for (auto [b, pb] : p) {
                if (pa < pb) CHECK(ws.at(a) >= ws.at(b));
            }
        }
    }
}

TEST_CASE("control loop applies weights from fresh frames") {
    auto store = store_with(3);
    FrameWriter writer(store);
    Constant est({{0, 0.0}, {1, 9.0}, {2, 4.5}});
    ControlLoop loop({&store}, store.actions(), est);
    CHECK_FALSE(loop.control_tick(0.25));  // nothing published yet
    CHECK(loop.ticks() == 1);

    for (Dip d = 0; d < 3; ++d) writer.publish_frame(d, 0.30);
    CHECK_FALSE(loop.control_tick(0.40));  // too early
    const auto gen = loop.control_tick(0.50);
    REQUIRE(gen);
    CHECK(*gen == 1);
    const auto w = store.actions().read();
    CHECK(w[0] == 64);
    CHECK(w[1] == 6);
    CHECK(w[2] == 35);  // round(64 * 5.5 / 10)
    CHECK(loop.applied() == 1);
    CHECK(loop.last_frame_times().size() == 3);

    // No new frames: the next tick is a no-op.
    CHECK_FALSE(loop.control_tick(0.75));
    CHECK(store.actions().generation() == 1);
}

TEST_CASE("stale frames are ignored") {
    auto store = store_with(2);
    FrameWriter writer(store);
    Constant est({{0, 1.0}, {1, 2.0}});
    ControlLoop loop({&store}, store.actions(), est);
    writer.publish_frame(0, 0.05);
    writer.publish_frame(1, 0.05);
    CHECK_FALSE(loop.control_tick(1.0));
    CHECK(store.actions().generation() == 0);
}

TEST_CASE("estimator failure keeps the last weights") {
    auto store = store_with(2);
    FrameWriter writer(store);
    Faulty est;
    ControlLoop loop({&store}, store.actions(), est);
    const auto before = store.actions().read();
    writer.publish_frame(0, 0.2);
    writer.publish_frame(1, 0.2);
    CHECK_FALSE(loop.control_tick(0.25));
    CHECK(loop.faults() == 1);
    CHECK(store.actions().read() == before);
    CHECK(store.actions().generation() == 0);
}

TEST_CASE("ground truth source feeds the oracle") {
    auto store = store_with(2);
    FrameWriter writer(store);
    OracleEstimator est;
    ControlLoop loop({&store}, store.actions(), est);
    loop.set_ground_truth_source([](Dip d, double t) {
        return std::optional<GroundTruth>(GroundTruth{d, t, 2, 0.5, d == 0 ? 30u : 2u});
    });
    writer.publish_frame(0, 0.2);
    writer.publish_frame(1, 0.2);
    REQUIRE(loop.control_tick(0.25));
    CHECK(loop.last_predictions().at(0) == 30.0);
    const auto w = store.actions().read();
    CHECK(w[0] == 2);  // round(64 / 29)
    CHECK(w[1] == 64);
}

TEST_CASE("control options are validated") {
    auto store = store_with(1);
    OracleEstimator est;
    ControlOptions bad;
    bad.period = 0.05;
    bad.frame_interval = 0.05;
    CHECK_THROWS_AS(ControlLoop({&store}, store.actions(), est, bad), std::invalid_argument);
    CHECK_THROWS_AS(ControlLoop({}, store.actions(), est), std::invalid_argument);
}

TEST_CASE("control thread ticks on its own") {
    auto store = store_with(2);
    Constant est({{0, 1.0}, {1, 2.0}});
    ControlOptions opt;
    opt.period = 0.002;
    opt.frame_interval = 0.001;
    ControlLoop loop({&store}, store.actions(), est, opt);
    ControlThread thread(loop, std::chrono::microseconds(2000));
    thread.start();
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
    thread.stop();
    CHECK(thread.ticks() > 5);
    CHECK(loop.ticks() > 0);
    CHECK(loop.ticks() <= thread.ticks());
}
