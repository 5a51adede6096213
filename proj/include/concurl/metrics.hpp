#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"

namespace concurl {

using Labels = std::vector<int>;

// Co-occurrence counts of two labelings after compacting each to [0, k).
struct ContingencyTable {
    std::vector<std::vector<std::int64_t>> counts;  // |U| x |V|
    std::vector<std::int64_t> row_sums;
    std::vector<std::int64_t> col_sums;
    std::vector<int> row_labels;  // original label of each row
    std::vector<int> col_labels;
    std::int64_t n = 0;

    std::size_t num_rows() const { return row_sums.size(); }
    std::size_t num_cols() const { return col_sums.size(); }

    // Same partition up to relabeling: each row and column has one non-zero.
    bool is_bijective() const {
        if (num_rows() != num_cols()) {
            return false;
        }
        for (std::size_t i = 0; i < num_rows(); ++i) {
            int nonzero = 0;
            for (auto c : counts[i]) {
                nonzero += c != 0;
            }
            if (nonzero != 1) {
                return false;
            }
        }
        return true;
    }
};

namespace detail {

inline std::vector<int> compact(std::span<const int> labels, std::vector<int>& originals) {
    originals.assign(labels.begin(), labels.end());
    std::sort(originals.begin(), originals.end());
    originals.erase(std::unique(originals.begin(), originals.end()), originals.end());
    std::vector<int> out;
    out.reserve(labels.size());
    for (int y : labels) {
        out.push_back(static_cast<int>(std::lower_bound(originals.begin(), originals.end(), y) - originals.begin()));
    }
    return out;
}

inline std::int64_t pairs(std::int64_t k) { return k * (k - 1) / 2; }

}  // namespace detail

inline ContingencyTable contingency(std::span<const int> u, std::span<const int> v) {
    if (u.size() != v.size()) {
        throw DimensionError("labelings have different lengths: " + std::to_string(u.size()) + " vs " +
                             std::to_string(v.size()));
    }
    ContingencyTable t;
    auto cu = detail::compact(u, t.row_labels);
    auto cv = detail::compact(v, t.col_labels);
    t.counts.assign(t.row_labels.size(), std::vector<std::int64_t>(t.col_labels.size(), 0));
    t.row_sums.assign(t.row_labels.size(), 0);
    t.col_sums.assign(t.col_labels.size(), 0);
    for (std::size_t i = 0; i < cu.size(); ++i) {
        ++t.counts[cu[i]][cv[i]];
        ++t.row_sums[cu[i]];
        ++t.col_sums[cv[i]];
    }
    t.n = static_cast<std::int64_t>(u.size());
    return t;
}

// Kuhn-Munkres on a square profit matrix. Returns, for each row, the column
// it is assigned to, maximizing the total profit. O(n^3).
inline std::vector<int> hungarian_maximize(const std::vector<std::vector<double>>& profit) {
    const std::size_t n = profit.size();
    for (const auto& row : profit) {
        if (row.size() != n) {
            throw DimensionError("hungarian_maximize needs a square matrix");
        }
    }
    if (n == 0) {
        return {};
    }
    // Minimize cost = -profit; 1-based potentials as in the classic formulation.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = -profit[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(n, -1);
    for (std::size_t j = 1; j <= n; ++j) {
        if (match[j] != 0) {
            assignment[match[j] - 1] = static_cast<int>(j - 1);
        }
    }
    return assignment;
}

struct AccuracyResult {
    double acc = 0;
    // Predicted cluster label -> true class label; clusters left without a
    // class (more clusters than classes) map to -1.
    std::map<int, int> mapping;
};

// Best accuracy over injective cluster -> class mappings.
inline AccuracyResult cluster_accuracy(std::span<const int> pred, std::span<const int> truth,
                                       std::optional<int> max_clusters = std::nullopt) {
    if (pred.empty()) {
        throw DataError("cluster_accuracy on empty input");
    }
    const auto table = contingency(pred, truth);
    if (max_clusters && static_cast<int>(table.num_rows()) > *max_clusters) {
        throw DataError("prediction uses " + std::to_string(table.num_rows()) + " clusters, more than K=" +
                        std::to_string(*max_clusters));
    }
    const std::size_t n = std::max(table.num_rows(), table.num_cols());
    std::vector<std::vector<double>> profit(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
        for (std::size_t j = 0; j < table.num_cols(); ++j) {
            profit[i][j] = static_cast<double>(table.counts[i][j]);
        }
    }
    const auto assignment = hungarian_maximize(profit);
    AccuracyResult out;
    std::int64_t matched = 0;
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
        const auto j = static_cast<std::size_t>(assignment[i]);
        if (j < table.num_cols()) {
            matched += table.counts[i][j];
            out.mapping[table.row_labels[i]] = table.col_labels[j];
        } else {
            out.mapping[table.row_labels[i]] = -1;
        }
    }
    out.acc = static_cast<double>(matched) / static_cast<double>(table.n);
    return out;
}

// Mutual information with the natural logarithm.
inline double mutual_information(const ContingencyTable& t) {
    const double n = static_cast<double>(t.n);
    std::vector<double> terms;
    for (std::size_t i = 0; i < t.num_rows(); ++i) {
        for (std::size_t j = 0; j < t.num_cols(); ++j) {
            const auto c = t.counts[i][j];
            if (c == 0) {
                continue;
            }
            const double cd = static_cast<double>(c);
            terms.push_back(cd / n *
                            std::log(n * cd / (static_cast<double>(t.row_sums[i]) * static_cast<double>(t.col_sums[j]))));
        }
    }
    // Sorted summation keeps MI(U,V) and MI(V,U) bit-identical.
    std::sort(terms.begin(), terms.end());
    double mi = 0;
    for (double term : terms) {
        mi += term;
    }
    return std::max(mi, 0.0);
}

inline double entropy(std::span<const std::int64_t> sizes, std::int64_t n) {
    double h = 0;
    for (auto s : sizes) {
        if (s > 0) {
            const double p = static_cast<double>(s) / static_cast<double>(n);
            h -= p * std::log(p);
        }
    }
    return std::max(h, 0.0);
}

// MI(U,V) / sqrt(MI(U,U) MI(V,V)). Identical partitions score 1; otherwise a
// zero self-information gives 0.
inline double nmi(std::span<const int> u, std::span<const int> v) {
    if (u.empty()) {
        throw DataError("nmi needs at least one point");
    }
    const auto t = contingency(u, v);
    if (t.is_bijective()) {
        return 1.0;
    }
    const double hu = entropy(t.row_sums, t.n);
    const double hv = entropy(t.col_sums, t.n);
    if (hu <= 0 || hv <= 0) {
        return 0.0;
    }
    return std::clamp(mutual_information(t) / std::sqrt(hu * hv), 0.0, 1.0);
}

// Adjusted Rand index from the contingency table. When max(RI) equals
// E[RI] the score is 1 for identical partitions and 0 otherwise.
inline double ari(std::span<const int> u, std::span<const int> v) {
    if (u.size() < 2) {
        throw DataError("ari needs at least two points");
    }
    const auto t = contingency(u, v);
    std::int64_t index = 0, sum_rows = 0, sum_cols = 0;
    for (const auto& row : t.counts) {
        for (auto c : row) {
            index += detail::pairs(c);
        }
    }
    for (auto a : t.row_sums) {
        sum_rows += detail::pairs(a);
    }
    for (auto b : t.col_sums) {
        sum_cols += detail::pairs(b);
    }
    const double total = static_cast<double>(detail::pairs(t.n));
    const double expected = static_cast<double>(sum_rows) * static_cast<double>(sum_cols) / total;
    const double maximum = 0.5 * static_cast<double>(sum_rows + sum_cols);
    if (maximum == expected) {
        return t.is_bijective() ? 1.0 : 0.0;
    }
    return (static_cast<double>(index) - expected) / (maximum - expected);
}

struct ClusterReport {
    double acc = 0;
    double nmi = 0;
    double ari = 0;
    std::map<int, int> mapping;
    int k_clusters = 0;
    int k_classes = 0;
};

inline ClusterReport make_report(std::span<const int> pred, std::span<const int> truth,
                                 std::optional<int> max_clusters = std::nullopt) {
    ClusterReport r;
    auto acc = cluster_accuracy(pred, truth, max_clusters);
    r.acc = acc.acc;
    r.mapping = std::move(acc.mapping);
    r.nmi = nmi(pred, truth);
    r.ari = pred.size() >= 2 ? ari(pred, truth) : 1.0;
    const auto t = contingency(pred, truth);
    r.k_clusters = static_cast<int>(t.num_rows());
    r.k_classes = static_cast<int>(t.num_cols());
    return r;
}

inline nlohmann::json to_json(const ClusterReport& r) {
    nlohmann::json mapping = nlohmann::json::array();
    for (const auto& [cluster, cls] : r.mapping) {
        mapping.push_back({{"cluster", cluster}, {"class", cls}});
    }
    return {{"acc", r.acc},         {"nmi", r.nmi},           {"ari", r.ari},
            {"mapping", mapping},   {"k_clusters", r.k_clusters}, {"k_classes", r.k_classes}};
}

inline ClusterReport report_from_json(const nlohmann::json& j) {
    ClusterReport r;
    r.acc = j.at("acc").get<double>();
    r.nmi = j.at("nmi").get<double>();
    r.ari = j.at("ari").get<double>();
    r.k_clusters = j.at("k_clusters").get<int>();
    r.k_classes = j.at("k_classes").get<int>();
    for (const auto& m : j.at("mapping")) {
        r.mapping[m.at("cluster").get<int>()] = m.at("class").get<int>();
    }
    return r;
}

}  // namespace concurl
