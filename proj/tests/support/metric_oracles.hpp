#pragma once

// Reference implementations written directly from the metric definitions,
// used only to check the library routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

namespace concurl::testing {

// Best accuracy over every injective mapping, by enumerating permutations of
// the class list (clusters padded to the same count).
inline double brute_force_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::set<int> cs(pred.begin(), pred.end());
    std::set<int> ks(truth.begin(), truth.end());
    std::vector<int> clusters(cs.begin(), cs.end());
    std::vector<int> classes(ks.begin(), ks.end());
    const std::size_t n = std::max(clusters.size(), classes.size());
    while (classes.size() < n) {
        classes.push_back(-1000 - static_cast<int>(classes.size()));
    }
    std::sort(classes.begin(), classes.end());
    std::size_t best = 0;
    do {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const auto pos = std::find(clusters.begin(), clusters.end(), pred[i]) - clusters.begin();
            if (classes[static_cast<std::size_t>(pos)] == truth[i]) {
                ++hits;
            }
        }
        best = std::max(best, hits);
    } while (std::next_permutation(classes.begin(), classes.end()));
    return static_cast<double>(best) / static_cast<double>(pred.size());
}

// MI(U,V) = sum_ij |Ui n Vj|/N log(N |Ui n Vj| / (|Ui| |Vj|)), by set counting.
inline double direct_mi(const std::vector<int>& u, const std::vector<int>& v) {
    std::set<int> us(u.begin(), u.end());
    std::set<int> vs(v.begin(), v.end());
    const double n = static_cast<double>(u.size());
    double mi = 0;
    for (int a : us) {
        for (int b : vs) {
            double inter = 0, ua = 0, vb = 0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                inter += (u[i] == a && v[i] == b);
                ua += (u[i] == a);
                vb += (v[i] == b);
            }
            if (inter > 0) {
                mi += inter / n * std::log(n * inter / (ua * vb));
            }
        }
    }
    return mi;
}

inline double direct_nmi(const std::vector<int>& u, const std::vector<int>& v) {
    return direct_mi(u, v) / std::sqrt(direct_mi(u, u) * direct_mi(v, v));
}

struct PairCounts {
    std::int64_t same_both = 0;   // a
    std::int64_t diff_both = 0;   // b
    std::int64_t same_u_only = 0;
    std::int64_t same_v_only = 0;
};

inline PairCounts count_pairs(const std::vector<int>& u, const std::vector<int>& v) {
    PairCounts c;
    for (std::size_t i = 0; i < u.size(); ++i) {
        for (std::size_t j = i + 1; j < u.size(); ++j) {
            const bool su = u[i] == u[j];
            const bool sv = v[i] == v[j];
            if (su && sv) {
                ++c.same_both;
            } else if (!su && !sv) {
                ++c.diff_both;
            } else if (su) {
                ++c.same_u_only;
            } else {
                ++c.same_v_only;
            }
        }
    }
    return c;
}

// ARI from pair counts: 2(n00 n11 - n01 n10) / ((n00+n01)(n01+n11) + (n00+n10)(n10+n11)),
// with every product formed in exact integers.
inline double pair_counting_ari(const std::vector<int>& u, const std::vector<int>& v) {
    const auto c = count_pairs(u, v);
    const std::int64_t n11 = c.same_both, n00 = c.diff_both, n10 = c.same_u_only, n01 = c.same_v_only;
    const std::int64_t num = 2 * (n00 * n11 - n01 * n10);
    const std::int64_t den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if (den == 0) {
        // Same partition exactly when no pair is split by only one labeling.
        return n10 == 0 && n01 == 0 ? 1.0 : 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace concurl::testing
