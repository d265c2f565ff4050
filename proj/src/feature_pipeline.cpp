#include "aquarius/feature_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace aquarius {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    for (;;) {
        const auto comma = line.find(',');
        out.push_back(line.substr(0, comma));
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
    }
    return out;
}

double parse_double(std::string_view text, const std::filesystem::path& path, std::size_t line_no) {
    double v = 0.0;
    while (!text.empty() && (text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end)
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(text) +
                                 "'");
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    return in;
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw std::runtime_error("to_chars failed");
    return std::string(buf.data(), ptr);
}

std::size_t nearest_rank_index(double q, std::size_t n) {
    if (n == 0) throw std::invalid_argument("nearest rank of an empty sample");
    const double x = q * static_cast<double>(n);
    const double rank = std::ceil(x - 1e-9 * std::max(1.0, x));
    if (rank <= 1.0) return 0;
    return std::min(n - 1, static_cast<std::size_t>(rank) - 1);
}

double nearest_rank(std::span<const double> values, double q) {
    std::vector<double> sorted(values.begin(), values.end());
    const auto k = nearest_rank_index(q, sorted.size());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    return sorted[k];
}

ChannelReduction reduce_channel(std::span<const double> samples, const std::optional<ChannelReduction>& prev,
                                double beta) {
    if (samples.empty()) return prev.value_or(ChannelReduction{});

    ChannelReduction r;
    const double n = static_cast<double>(samples.size());
    r.avg = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : samples) ss += (v - r.avg) * (v - r.avg);
    r.std = std::sqrt(ss / n);
    r.p90 = nearest_rank(samples, 0.9);
    if (prev) {
        r.decay_avg = beta * prev->decay_avg + (1.0 - beta) * r.avg;
        r.decay_p90 = beta * prev->decay_p90 + (1.0 - beta) * r.p90;
    } else {
        r.decay_avg = r.avg;
        r.decay_p90 = r.p90;
    }
    return r;
}

std::array<double, kNumFeatures> ReducedFrame::features() const {
    std::array<double, kNumFeatures> out{};
    std::size_t k = 0;
    for (double c : counters) out[k++] = c;
    for (const auto& r : reductions) {
        out[k++] = r.avg;
        out[k++] = r.p90;
        out[k++] = r.std;
        out[k++] = r.decay_avg;
        out[k++] = r.decay_p90;
    }
    return out;
}

ReducedFrame FrameReducer::reduce(const FeatureFrame& frame, std::optional<GroundTruth> truth) {
    ReducedFrame out;
    out.time = frame.window_end;
    out.vip = frame.vip;
    out.dip = frame.dip;
    for (std::size_t c = 0; c < kNumCounters; ++c) out.counters[c] = static_cast<double>(frame.counters[c]);
    for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
        std::optional<ChannelReduction> prev;
        if (prev_) prev = (*prev_)[ch];
        out.reductions[ch] = reduce_channel(frame.channels[ch].values, prev);
    }
    out.ground_truth = truth;
    prev_ = out.reductions;
    return out;
}

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (auto c : kCounterNames) n.emplace_back(c);
        for (auto ch : kChannelNames) {
            for (auto r : kReductionNames) n.push_back(std::string(ch) + "_" + std::string(r));
        }
        return n;
    }();
    return names;
}

const std::vector<std::string>& dataset_columns() {
    static const std::vector<std::string> cols = [] {
        std::vector<std::string> c = {"time", "vip", "dip"};
        const auto& f = feature_names();
        c.insert(c.end(), f.begin(), f.end());
        c.insert(c.end(), {"n_cpu", "cpu_usage", "busy_threads"});
        return c;
    }();
    return cols;
}

std::size_t Table::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::out_of_range("no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

// ---------------------------------------------------------------- stats

void NormalizationStats::save(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "name,mean,std\n";
    for (std::size_t i = 0; i < names.size(); ++i)
        out << names[i] << ',' << format_double(mean[i]) << ',' << format_double(std[i]) << '\n';
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

NormalizationStats NormalizationStats::load(const std::filesystem::path& path) {
    auto in = open_in(path);
    NormalizationStats s;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        auto cells = split_csv(line);
        if (cells.size() != 3) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 3 cells");
        s.names.emplace_back(cells[0]);
        s.mean.push_back(parse_double(cells[1], path, line_no));
        s.std.push_back(parse_double(cells[2], path, line_no));
    }
    return s;
}

std::size_t NormalizationStats::index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::out_of_range("no statistics for column '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

NormalizationStats compute_stats(const Table& table, std::span<const std::size_t> rows) {
    std::vector<std::size_t> all;
    if (rows.empty()) {
        all.resize(table.rows.size());
        std::iota(all.begin(), all.end(), 0);
        rows = all;
    }
    if (rows.empty()) throw std::invalid_argument("statistics of an empty table");
    const std::size_t m = table.columns.size();
    NormalizationStats s;
    s.names = table.columns;
    s.mean.assign(m, 0.0);
    s.std.assign(m, 0.0);
    const double n = static_cast<double>(rows.size());
    for (auto r : rows) {
        for (std::size_t c = 0; c < m; ++c) s.mean[c] += table.rows[r][c];
    }
    for (auto& v : s.mean) v /= n;
    for (auto r : rows) {
        for (std::size_t c = 0; c < m; ++c) {
            const double d = table.rows[r][c] - s.mean[c];
            s.std[c] += d * d;
        }
    }
    for (auto& v : s.std) v = std::sqrt(v / n);
    return s;
}

void standardize_in_place(std::span<double> values, const NormalizationStats& stats) {
    if (values.size() != stats.mean.size()) throw std::invalid_argument("feature vector does not match statistics");
    for (std::size_t c = 0; c < values.size(); ++c)
        values[c] = stats.std[c] < kStdEpsilon ? 0.0 : (values[c] - stats.mean[c]) / stats.std[c];
}

Table standardize(const Table& table, const NormalizationStats& stats) {
    Table out = table;
    for (auto& row : out.rows) standardize_in_place(row, stats);
    return out;
}

std::pair<Table, NormalizationStats> standardize(const Table& table) {
    if (table.rows.empty()) throw std::invalid_argument("standardize needs a non-empty table");
    auto stats = compute_stats(table);
    return {standardize(table, stats), std::move(stats)};
}

// ---------------------------------------------------------------- outliers

std::vector<double> outlier_thresholds(const Table& table, double q) {
    std::vector<double> out(table.columns.size(), 0.0);
    if (table.rows.empty()) return out;
    std::vector<double> col(table.rows.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        for (std::size_t r = 0; r < table.rows.size(); ++r) col[r] = table.rows[r][c];
        out[c] = nearest_rank(col, q);
    }
    return out;
}

Table drop_outliers(const Table& table, std::span<const double> thresholds) {
    if (thresholds.size() != table.columns.size()) throw std::invalid_argument("one threshold per column required");
    Table out;
    out.columns = table.columns;
    for (const auto& row : table.rows) {
        bool keep = true;
        for (std::size_t c = 0; c < row.size() && keep; ++c) keep = !(row[c] > thresholds[c]);
        if (keep) out.rows.push_back(row);
    }
    return out;
}

Table drop_outliers(const Table& table, double q) { return drop_outliers(table, outlier_thresholds(table, q)); }

std::vector<WindowRange> window_ranges(std::size_t n, std::size_t length, std::size_t stride) {
    if (length == 0 || stride == 0) throw std::invalid_argument("window length and stride must be positive");
    std::vector<WindowRange> out;
    for (std::size_t begin = 0; begin + length <= n; begin += stride) out.push_back({begin, begin + length});
    return out;
}

// ---------------------------------------------------------------- dataset

void Dataset::sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const ReducedFrame& a, const ReducedFrame& b) {
        return std::tie(a.time, a.vip, a.dip) < std::tie(b.time, b.vip, b.dip);
    });
}

Table Dataset::to_table(bool with_ground_truth) const {
    Table t;
    t.columns = feature_names();
    if (with_ground_truth) t.columns.insert(t.columns.end(), {"n_cpu", "cpu_usage", "busy_threads"});
    for (const auto& r : rows) {
        if (with_ground_truth && !r.ground_truth) continue;
        const auto f = r.features();
        std::vector<double> row(f.begin(), f.end());
        if (with_ground_truth) {
            row.push_back(r.ground_truth->n_cpu);
            row.push_back(r.ground_truth->cpu_usage);
            row.push_back(r.ground_truth->busy_threads);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    auto out = open_out(path);
    const auto& cols = dataset_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : dataset.rows) {
        out << format_double(r.time) << ',' << r.vip << ',' << r.dip;
        for (double v : r.features()) out << ',' << format_double(v);
        if (r.ground_truth) {
            out << ',' << r.ground_truth->n_cpu << ',' << format_double(r.ground_truth->cpu_usage) << ','
                << r.ground_truth->busy_threads;
        } else {
            out << ",,,";
        }
        out << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");

    nlohmann::json meta = {{"columns", cols.size()}, {"rows", dataset.rows.size()}, {"split_seed", dataset.split_seed}};
    auto meta_out = open_out(path.string() + ".meta.json");
    meta_out << meta.dump(2) << '\n';
}

Dataset import_dataset(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto& cols = dataset_columns();
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != cols.size())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(cols.size()) + " columns, got " + std::to_string(cells.size()));
        if (line_no == 1) {
            for (std::size_t i = 0; i < cols.size(); ++i) {
                if (cells[i] != cols[i])
                    throw std::runtime_error(path.string() + ": unexpected column '" + std::string(cells[i]) + "'");
            }
            continue;
        }
        ReducedFrame r;
        r.time = parse_double(cells[0], path, line_no);
        r.vip = static_cast<Vip>(parse_double(cells[1], path, line_no));
        r.dip = static_cast<Dip>(parse_double(cells[2], path, line_no));
        std::size_t k = 3;
        for (auto& c : r.counters) c = parse_double(cells[k++], path, line_no);
        for (auto& red : r.reductions) {
            red.avg = parse_double(cells[k++], path, line_no);
            red.p90 = parse_double(cells[k++], path, line_no);
            red.std = parse_double(cells[k++], path, line_no);
            red.decay_avg = parse_double(cells[k++], path, line_no);
            red.decay_p90 = parse_double(cells[k++], path, line_no);
        }
        if (!cells[k].empty()) {
            GroundTruth g;
            g.dip = r.dip;
            g.time = r.time;
            g.n_cpu = static_cast<std::uint32_t>(parse_double(cells[k], path, line_no));
            g.cpu_usage = parse_double(cells[k + 1], path, line_no);
            g.busy_threads = static_cast<std::uint32_t>(parse_double(cells[k + 2], path, line_no));
            r.ground_truth = g;
        }
        ds.rows.push_back(std::move(r));
    }
    if (line_no == 0) throw std::runtime_error(path.string() + ": missing header");
    std::ifstream meta_in(path.string() + ".meta.json");
    if (meta_in) {
        auto meta = nlohmann::json::parse(meta_in, nullptr, false);
        if (!meta.is_discarded() && meta.contains("split_seed")) ds.split_seed = meta["split_seed"].get<std::uint64_t>();
    }
    return ds;
}

}  // namespace aquarius
