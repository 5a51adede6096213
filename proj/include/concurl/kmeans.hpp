#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "concurl/error.hpp"
#include "concurl/random.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

struct KMeansOptions {
    int restarts = 10;
    int max_iterations = 300;
    double relative_tolerance = 1e-6;
};

struct KMeansResult {
    std::vector<int> labels;
    Tensor centers;
    double inertia = 0;
};

namespace detail {

inline double squared_distance(std::span<const Real> a, std::span<const Real> b) {
    double d = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        d += diff * diff;
    }
    return d;
}

inline Tensor kmeans_plus_plus(const Tensor& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows();
    Tensor centers({k, x.cols()});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t first = pick(rng);
    std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(x.row(i), centers.row(c - 1)));
            total += nearest[i];
        }
        std::size_t chosen = n - 1;
        if (total > 0) {
            double target = uniform(rng, 0.0, total);
            for (std::size_t i = 0; i < n; ++i) {
                target -= nearest[i];
                if (target <= 0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        std::copy(x.row(chosen).begin(), x.row(chosen).end(), centers.row(c).begin());
    }
    return centers;
}

inline KMeansResult lloyd(const Tensor& x, Tensor centers, const KMeansOptions& opts) {
    const std::size_t n = x.rows();
    const std::size_t k = centers.rows();
    const std::size_t d = x.cols();
    KMeansResult r;
    r.labels.assign(n, 0);
    double previous = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double dist = squared_distance(x.row(i), centers.row(c));
                if (dist < best) {
                    best = dist;
                    arg = static_cast<int>(c);
                }
            }
            r.labels[i] = arg;
            inertia += best;
        }
        std::vector<double> sums(k * d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(r.labels[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) {
                sums[c * d + j] += x(i, j);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            // Empty clusters keep their previous center.
            if (counts[c] == 0) {
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) {
                centers(c, j) = static_cast<Real>(sums[c * d + j] / static_cast<double>(counts[c]));
            }
        }
        r.inertia = inertia;
        if (std::isfinite(previous) &&
            std::abs(previous - inertia) <= opts.relative_tolerance * std::max(previous, 1e-300)) {
            break;
        }
        previous = inertia;
    }
    // Final assignment against the final centers.
    r.inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = squared_distance(x.row(i), centers.row(c));
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(c);
            }
        }
        r.labels[i] = arg;
        r.inertia += best;
    }
    r.centers = std::move(centers);
    return r;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
// within-cluster sum of squares wins.
inline KMeansResult kmeans_fit(const Tensor& features, int k, std::uint64_t seed, const KMeansOptions& opts = {}) {
    if (k < 1) {
        throw ConfigError("k-means needs K >= 1");
    }
    if (features.rows() < static_cast<std::size_t>(k)) {
        throw DataError("k-means needs at least K points: N=" + std::to_string(features.rows()) +
                        ", K=" + std::to_string(k));
    }
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < std::max(opts.restarts, 1); ++restart) {
        auto rng = make_rng(seed, {0x4b3a, static_cast<std::uint64_t>(restart)});
        auto r = detail::lloyd(features, detail::kmeans_plus_plus(features, static_cast<std::size_t>(k), rng), opts);
        if (r.inertia < best.inertia) {
            best = std::move(r);
        }
    }
    return best;
}

inline std::vector<int> kmeans(const Tensor& features, int k, int restarts, std::uint64_t seed) {
    KMeansOptions opts;
    opts.restarts = restarts;
    return kmeans_fit(features, k, seed, opts).labels;
}

}  // namespace concurl
