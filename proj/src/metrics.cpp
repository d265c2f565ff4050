#include "aquarius/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "aquarius/feature_pipeline.hpp"

namespace aquarius {

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double jain_fairness(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("jain_fairness of an empty vector");
    double sum = 0.0;
    double sq = 0.0;
    for (double x : values) {
        if (x < 0.0) throw std::invalid_argument("jain_fairness needs non-negative values");
        sum += x;
        sq += x * x;
    }
    if (sq == 0.0) return 1.0;
    return sum * sum / (static_cast<double>(values.size()) * sq);
}

double overprovision(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("overprovision of an empty vector");
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (mean <= 0.0) return 1.0;
    return *std::max_element(values.begin(), values.end()) / mean;
}

FctStats fct_stats(std::span<const double> fcts) {
    FctStats s;
    s.count = fcts.size();
    if (fcts.empty()) return s;
    s.mean = std::accumulate(fcts.begin(), fcts.end(), 0.0) / static_cast<double>(fcts.size());
    s.p90 = nearest_rank(fcts, 0.90);
    s.p99 = nearest_rank(fcts, 0.99);
    return s;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs two equal series, n >= 2");
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace aquarius
