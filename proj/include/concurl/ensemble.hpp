#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"
#include "concurl/metrics.hpp"
#include "concurl/objectives.hpp"
#include "concurl/transforms.hpp"

namespace concurl {

// Labels induced by each transform: argmax_j of the assignment computed from
// A_m z and A_m C.
inline std::vector<std::vector<int>> ensemble_assignments(const Tensor& z, const Tensor& c,
                                                          const TransformEnsemble& ens, double tau) {
    ens.check_dim(z.cols(), "embedding");
    ens.check_dim(c.rows(), "prototype");
    std::vector<std::vector<int>> out;
    out.reserve(ens.size());
    for (std::size_t m = 0; m < ens.size(); ++m) {
        out.push_back(hard_assign(soft_assign(ens.apply_rows(m, z), ens.apply_prototypes(m, c), tau)));
    }
    return out;
}

struct DiversityRecord {
    int epoch = 0;
    double mean_pairwise_nmi = 0;
    double std_pairwise_nmi = 0;
    std::size_t num_pairs = 0;
};

inline nlohmann::json to_json(const DiversityRecord& r) {
    return {{"epoch", r.epoch}, {"mean", r.mean_pairwise_nmi}, {"std", r.std_pairwise_nmi}, {"num_pairs", r.num_pairs}};
}

// Mean and population standard deviation of NMI over all M(M-1)/2 pairs.
inline DiversityRecord diversity(const std::vector<std::vector<int>>& labelings, int epoch = 0) {
    const std::size_t m = labelings.size();
    if (m < 2) {
        throw ConfigError("diversity needs at least two labelings");
    }
    for (const auto& l : labelings) {
        if (l.size() != labelings.front().size()) {
            throw DimensionError("diversity: labelings have different lengths");
        }
    }
    std::vector<double> values;
    values.reserve(m * (m - 1) / 2);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            values.push_back(nmi(labelings[a], labelings[b]));
        }
    }
    double mean = 0;
    for (auto v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0;
    for (auto v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(values.size());
    return {epoch, mean, std::sqrt(var), values.size()};
}

}  // namespace concurl
