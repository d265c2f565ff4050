// Python module `aquarius._core`: dataset and coefficient formats, the
// feature pipeline, metrics, and whole experiment runs.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aquarius/bench.hpp"
#include "aquarius/estimator.hpp"
#include "aquarius/experiment.hpp"
#include "aquarius/feature_pipeline.hpp"
#include "aquarius/metrics.hpp"
#include "aquarius/policies.hpp"

namespace py = pybind11;
using namespace aquarius;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Table to_table(const Array& a, std::vector<std::string> columns) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    const auto r = a.unchecked<2>();
    if (columns.empty()) {
        for (py::ssize_t c = 0; c < r.shape(1); ++c) columns.push_back("c" + std::to_string(c));
    }
    if (static_cast<py::ssize_t>(columns.size()) != r.shape(1))
        throw std::invalid_argument("column names do not match the array width");
    Table t;
    t.columns = std::move(columns);
    t.rows.resize(r.shape(0));
    for (py::ssize_t i = 0; i < r.shape(0); ++i) {
        t.rows[i].resize(r.shape(1));
        for (py::ssize_t j = 0; j < r.shape(1); ++j) t.rows[i][j] = r(i, j);
    }
    return t;
}

Array from_rows(const std::vector<std::vector<double>>& rows, std::size_t width) {
    Array out({static_cast<py::ssize_t>(rows.size()), static_cast<py::ssize_t>(width)});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) w(i, j) = rows[i][j];
    }
    return out;
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
    return {a.data(), a.data() + a.size()};
}

// features.csv as numpy: every column of the file, ground-truth cells NaN when absent.
py::dict read_dataset(const std::filesystem::path& path) {
    const auto ds = import_dataset(path);
    const auto& cols = dataset_columns();
    Array data({static_cast<py::ssize_t>(ds.rows.size()), static_cast<py::ssize_t>(cols.size())});
    auto w = data.mutable_unchecked<2>();
    for (std::size_t i = 0; i < ds.rows.size(); ++i) {
        const auto& r = ds.rows[i];
        w(i, 0) = r.time;
        w(i, 1) = r.vip;
        w(i, 2) = r.dip;
        const auto f = r.features();
        for (std::size_t k = 0; k < kNumFeatures; ++k) w(i, 3 + k) = f[k];
        const double nan = std::numeric_limits<double>::quiet_NaN();
        w(i, 3 + kNumFeatures) = r.ground_truth ? r.ground_truth->n_cpu : nan;
        w(i, 4 + kNumFeatures) = r.ground_truth ? r.ground_truth->cpu_usage : nan;
        w(i, 5 + kNumFeatures) = r.ground_truth ? r.ground_truth->busy_threads : nan;
    }
    py::dict out;
    out["columns"] = cols;
    out["data"] = data;
    out["split_seed"] = ds.split_seed;
    return out;
}

py::dict run(const std::string& config_json, const std::string& out_dir) {
    auto config = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
    Report report;
    {
        py::gil_scoped_release release;
        report = run_experiment(config);
        if (!out_dir.empty()) write_report(report, out_dir);
    }
    return py::module_::import("json").attr("loads")(report_json(report).dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "aquarius simulator core";
    m.attr("__version__") = std::string(version());
    m.attr("NUM_FEATURES") = kNumFeatures;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InvariantViolation>(m, "InvariantViolation", PyExc_RuntimeError);

    m.def("feature_names", &feature_names);
    m.def("dataset_columns", &dataset_columns);
    m.def("read_dataset", &read_dataset, py::arg("path"));

    py::class_<NormalizationStats>(m, "NormalizationStats")
        .def(py::init<>())
        .def_readwrite("names", &NormalizationStats::names)
        .def_readwrite("mean", &NormalizationStats::mean)
        .def_readwrite("std", &NormalizationStats::std)
        .def("save", &NormalizationStats::save)
        .def_static("load", &NormalizationStats::load)
        .def("index_of", &NormalizationStats::index_of);

    m.def(
        "compute_stats",
        [](const Array& a, std::vector<std::string> columns, std::vector<std::size_t> rows) {
            return compute_stats(to_table(a, std::move(columns)), rows);
        },
        py::arg("data"), py::arg("columns") = std::vector<std::string>{}, py::arg("rows") = std::vector<std::size_t>{});
    m.def(
        "standardize",
        [](const Array& a, const NormalizationStats& stats) {
            const auto t = standardize(to_table(a, stats.names), stats);
            return from_rows(t.rows, t.columns.size());
        },
        py::arg("data"), py::arg("stats"));
    m.def(
        "drop_outliers",
        [](const Array& a, double q) {
            const auto t = drop_outliers(to_table(a, {}), q);
            return from_rows(t.rows, t.columns.size());
        },
        py::arg("data"), py::arg("q") = 0.99);
    m.def(
        "window_ranges",
        [](std::size_t n, std::size_t length, std::size_t stride) {
            std::vector<std::pair<std::size_t, std::size_t>> out;
            for (auto r : window_ranges(n, length, stride)) out.emplace_back(r.begin, r.end);
            return out;
        },
        py::arg("n"), py::arg("length") = 64, py::arg("stride") = 32);
    m.def(
        "nearest_rank", [](const Array& a, double q) { return nearest_rank(to_vector(a), q); }, py::arg("values"),
        py::arg("q"));

    py::class_<LinearEstimator>(m, "LinearEstimator")
        .def_property_readonly("bias", &LinearEstimator::bias)
        .def_property_readonly("coefficients",
                               [](const LinearEstimator& e) {
                                   const auto& c = e.coefficients();
                                   return std::vector<double>(c.begin(), c.end());
                               })
        .def("predict", [](const LinearEstimator& e, const Array& x) -> py::object {
            if (x.ndim() == 1) return py::float_(e.predict(std::span<const double>(x.data(), x.size())));
            if (x.ndim() != 2) throw std::invalid_argument("expected a 1-D or 2-D array");
            const auto rows = x.shape(0);
            const auto width = static_cast<std::size_t>(x.shape(1));
            Array out(std::vector<py::ssize_t>{rows});
            double* dst = out.mutable_data();
            const double* src = x.data();
            for (py::ssize_t i = 0; i < rows; ++i) dst[i] = e.predict(std::span<const double>(src + i * width, width));
            return std::move(out);
        });
    m.def("load_coefficients", &load_coefficients, py::arg("path"));
    m.def("weights_from_predictions", &weights_from_predictions, py::arg("predictions"),
          py::arg("w_max") = ActionRegisters::kMaxWeight);

    m.def(
        "jain_fairness", [](const Array& a) { return jain_fairness(to_vector(a)); }, py::arg("values"));
    m.def(
        "overprovision", [](const Array& a) { return overprovision(to_vector(a)); }, py::arg("values"));
    m.def(
        "spearman", [](const Array& x, const Array& y) { return spearman(to_vector(x), to_vector(y)); },
        py::arg("x"), py::arg("y"));

    m.def(
        "maglev_table",
        [](std::vector<Dip> backends, std::uint32_t size) {
            const auto t = MaglevTable::build(backends, size);
            return std::vector<Dip>(t.entries().begin(), t.entries().end());
        },
        py::arg("backends"), py::arg("size") = MaglevTable::kDefaultSize);

    m.def("default_config", [] { return ExperimentConfig{}.to_json().dump(); });
    m.def("run_experiment", &run, py::arg("config_json"), py::arg("out_dir") = "",
          "Runs one experiment from a JSON config; returns the report as a dict.");
    m.def(
        "bench",
        [](std::uint64_t flows, std::uint32_t repeats) {
            BenchConfig c;
            c.flows = flows;
            c.repeats = repeats;
            return py::module_::import("json").attr("loads")(to_json(run_bench(c)));
        },
        py::arg("flows") = 20000, py::arg("repeats") = 5);
}
