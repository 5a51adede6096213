#pragma once

// Plain alternating normalization on nested vectors with a fixed round count,
// kept separate from the library solver.

#include <cmath>
#include <vector>

namespace concurl::testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix sinkhorn_oracle(const Matrix& scores, double eps, int rounds = 10000) {
    const std::size_t b = scores.size();
    const std::size_t k = scores[0].size();
    Matrix q(b, std::vector<double>(k));
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            q[i][j] = std::exp(scores[i][j] / eps);
        }
    }
    for (int r = 0; r < rounds; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < b; ++i) s += q[i][j];
            for (std::size_t i = 0; i < b; ++i) q[i][j] /= s * static_cast<double>(k);
        }
        for (std::size_t i = 0; i < b; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) s += q[i][j];
            for (std::size_t j = 0; j < k; ++j) q[i][j] /= s * static_cast<double>(b);
        }
    }
    for (auto& row : q) {
        for (auto& v : row) v *= static_cast<double>(b);
    }
    return q;
}

// -(1/B) sum_ij q_ij log max(p_ij, 1e-12), by scalar loops.
inline double cross_entropy_oracle(const Matrix& q, const Matrix& p) {
    double total = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < q[i].size(); ++j) {
            total += q[i][j] * std::log(std::max(p[i][j], 1e-12));
        }
    }
    return -total / static_cast<double>(q.size());
}

// Softmax over j of cos(z_i, c_j) / tau with c_j the j-th column of C.
inline Matrix soft_assign_oracle(const Matrix& z, const Matrix& c, double tau) {
    const std::size_t d = c.size();
    const std::size_t k = c[0].size();
    Matrix p(z.size(), std::vector<double>(k));
    for (std::size_t i = 0; i < z.size(); ++i) {
        double zn = 0;
        for (std::size_t a = 0; a < d; ++a) zn += z[i][a] * z[i][a];
        zn = std::sqrt(zn);
        double total = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double cn = 0, dot = 0;
            for (std::size_t a = 0; a < d; ++a) {
                cn += c[a][j] * c[a][j];
                dot += z[i][a] * c[a][j];
            }
            p[i][j] = std::exp(dot / (zn * std::sqrt(cn)) / tau);
            total += p[i][j];
        }
        for (auto& v : p[i]) v /= total;
    }
    return p;
}

inline Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Matrix transpose_oracle(const Matrix& a) {
    Matrix out(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
    return out;
}

}  // namespace concurl::testing
