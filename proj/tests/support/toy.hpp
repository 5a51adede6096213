#pragma once

// Small fixtures shared by the model, objective and trainer tests.

#include <cstdint>
#include <vector>

#include "concurl/model.hpp"
#include "concurl/random.hpp"
#include "concurl/tensor.hpp"

namespace concurl::testing {

// input 8, encoder widths 16/8, heads 16 -> 8.
inline NetworkSpec toy_spec() {
    NetworkSpec s;
    s.encoder_layers = {8, 16, 8};
    s.projector = {16, 8};
    s.predictor = {16, 8};
    s.cluster_projector = {16, 8};
    return s;
}

inline Tensor gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sigma = 1.0) {
    auto rng = make_rng(seed, {0x7465737473ULL});
    Tensor t({rows, cols});
    for (auto& v : t.data()) {
        v = static_cast<Real>(normal(rng, 0.0, sigma));
    }
    return t;
}

inline std::vector<std::vector<double>> to_nested(const Tensor& t) {
    std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            out[i][j] = t(i, j);
        }
    }
    return out;
}

}  // namespace concurl::testing
