#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"
#include "concurl/model.hpp"
#include "concurl/ops.hpp"
#include "concurl/tape.hpp"
#include "concurl/tensor.hpp"
#include "concurl/transforms.hpp"

namespace concurl {

inline constexpr Real kPrototypeNormFloor = Real(1e-12);

struct SinkhornConfig {
    double epsilon = 0.05;
    int num_iters = 3;
    // When set, iterate until the marginal residual drops below it.
    std::optional<double> convergence_tol;
    int max_iters = 1000000;

    void validate() const {
        if (!(epsilon > 0)) {
            throw ConfigError("sinkhorn epsilon must be positive");
        }
        if (num_iters < 1) {
            throw ConfigError("sinkhorn num_iters must be >= 1");
        }
        if (convergence_tol && !(*convergence_tol > 0)) {
            throw ConfigError("sinkhorn convergence_tol must be positive");
        }
    }

    static SinkhornConfig converged(double epsilon = 0.05, double tol = 1e-10) {
        SinkhornConfig c;
        c.epsilon = epsilon;
        c.convergence_tol = tol;
        return c;
    }
};

inline nlohmann::json to_json(const SinkhornConfig& c) {
    nlohmann::json j = {{"epsilon", c.epsilon}, {"num_iters", c.num_iters}};
    if (c.convergence_tol) {
        j["convergence_tol"] = *c.convergence_tol;
    }
    return j;
}

inline SinkhornConfig sinkhorn_config_from_json(const nlohmann::json& j) {
    SinkhornConfig c;
    c.epsilon = j.value("epsilon", c.epsilon);
    c.num_iters = j.value("num_iters", c.num_iters);
    if (j.contains("convergence_tol") && !j.at("convergence_tol").is_null()) {
        c.convergence_tol = j.at("convergence_tol").get<double>();
    }
    c.validate();
    return c;
}

struct SinkhornResult {
    Tensor q;                        // B x K, rows sum to 1
    std::vector<double> residuals;   // marginal residual after each round (index 0: before any)
    int iterations = 0;
};

// Balanced codes from a B x K score matrix. Q starts as exp(S / eps) (shifted by
// the global max), then columns are scaled to mass 1/K and rows to mass 1/B in
// turn; the result is multiplied by B so that every row sums to 1.
inline SinkhornResult sinkhorn_from_scores(const Tensor& scores, const SinkhornConfig& cfg) {
    cfg.validate();
    const std::size_t b = scores.rows();
    const std::size_t k = scores.cols();
    if (scores.size() == 0) {
        throw DimensionError("sinkhorn: empty score matrix");
    }
    if (!scores.all_finite()) {
        throw NumericError("sinkhorn: non-finite scores");
    }
    Real mx = scores[0];
    for (auto v : scores.data()) {
        mx = std::max(mx, v);
    }
    std::vector<double> q(b * k);
    double total = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = std::exp((static_cast<double>(scores[i]) - mx) / cfg.epsilon);
        total += q[i];
    }
    for (auto& v : q) {
        v /= total;
    }
    const double col_target = 1.0 / static_cast<double>(k);
    const double row_target = 1.0 / static_cast<double>(b);
    std::vector<double> col(k), row(b);
    auto residual = [&] {
        std::fill(col.begin(), col.end(), 0.0);
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                col[j] += q[i * k + j];
                row[i] += q[i * k + j];
            }
        }
        double r = 0;
        for (auto c : col) r += std::abs(c - col_target);
        for (auto s : row) r += std::abs(s - row_target);
        return r;
    };
    SinkhornResult res;
    res.residuals.push_back(residual());
    const int limit = cfg.convergence_tol ? cfg.max_iters : cfg.num_iters;
    for (int it = 0; it < limit; ++it) {
        if (cfg.convergence_tol && res.residuals.back() < *cfg.convergence_tol) {
            break;
        }
        std::fill(col.begin(), col.end(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                col[j] += q[i * k + j];
            }
        }
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                q[i * k + j] *= col_target / col[j];
            }
        }
        for (std::size_t i = 0; i < b; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) {
                s += q[i * k + j];
            }
            for (std::size_t j = 0; j < k; ++j) {
                q[i * k + j] *= row_target / s;
            }
        }
        ++res.iterations;
        res.residuals.push_back(residual());
    }
    if (cfg.convergence_tol && res.residuals.back() >= *cfg.convergence_tol) {
        throw NumericError("sinkhorn did not reach tolerance " + std::to_string(*cfg.convergence_tol) + " in " +
                           std::to_string(cfg.max_iters) + " rounds");
    }
    res.q = Tensor({b, k});
    for (std::size_t i = 0; i < q.size(); ++i) {
        res.q[i] = static_cast<Real>(q[i] * static_cast<double>(b));
    }
    return res;
}

namespace detail {

inline void check_prototypes(const Tensor& c) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
        Real ss = 0;
        for (std::size_t i = 0; i < c.rows(); ++i) {
            ss += c(i, j) * c(i, j);
        }
        if (!(std::sqrt(ss) >= kPrototypeNormFloor)) {
            throw DegeneratePrototypeError("prototype " + std::to_string(j) + " has (near) zero norm");
        }
    }
}

inline void check_tau(double tau) {
    if (!(tau > 0)) {
        throw ConfigError("temperature tau must be positive");
    }
}

// <z_i / |z_i|, c_j / |c_j|> for every sample i and prototype j.
inline Tensor cosine_scores(const Tensor& z, const Tensor& c) {
    if (z.cols() != c.rows()) {
        throw DimensionError("embeddings " + shape_string(z.shape()) + " do not match prototypes " +
                             shape_string(c.shape()));
    }
    check_prototypes(c);
    Tape t;
    Var zn = l2_normalize(t.constant(z));
    Var cn = transpose(l2_normalize(transpose(t.constant(c))));
    return matmul(zn, cn).value();
}

}  // namespace detail

inline Tensor sinkhorn_codes(const Tensor& z, const Tensor& c, const SinkhornConfig& cfg) {
    return sinkhorn_from_scores(detail::cosine_scores(z, c), cfg).q;
}

// p_ij = softmax_j(<z_i/|z_i|, c_j/|c_j|> / tau), differentiable in z and C.
inline Var soft_assign(Var z, Var c, double tau) {
    detail::check_tau(tau);
    if (z.value().cols() != c.value().rows()) {
        throw DimensionError("soft_assign: embeddings " + shape_string(z.value().shape()) +
                             " do not match prototypes " + shape_string(c.value().shape()));
    }
    detail::check_prototypes(c.value());
    Var zn = l2_normalize(z);
    Var cn = transpose(l2_normalize(transpose(c)));
    return softmax_rows(scale(matmul(zn, cn), static_cast<Real>(1.0 / tau)));
}

inline Tensor soft_assign(const Tensor& z, const Tensor& c, double tau) {
    detail::check_tau(tau);
    Tensor s = detail::cosine_scores(z, c);
    s *= static_cast<Real>(1.0 / tau);
    return softmax_rows(s);
}

// Mean over the batch of |w1 - v2|^2 + |w2 - v1|^2 on unit-normalized rows;
// the target projections are constants.
inline Var byol_loss(Var w1, Var w2, const Tensor& v1_target, const Tensor& v2_target) {
    Tape& t = *w1.tape;
    if (w1.value().shape() != v2_target.shape() || w2.value().shape() != v1_target.shape()) {
        throw DimensionError("byol_loss: prediction and target shapes differ");
    }
    Var a = sum_squares(sub(l2_normalize(w1), l2_normalize(t.constant(v2_target))));
    Var b = sum_squares(sub(l2_normalize(w2), l2_normalize(t.constant(v1_target))));
    return scale(add(a, b), Real(1) / static_cast<Real>(w1.value().rows()));
}

inline Var byol_loss(const ForwardBundle& f) {
    return byol_loss(f.views[0].w, f.views[1].w, f.views[0].v_target, f.views[1].v_target);
}

// 1/2 CE(q2, log p1) + 1/2 CE(q1, log p2), each averaged over the batch.
inline Var swapped_cluster_loss(Var p1, Var p2, const Tensor& q1, const Tensor& q2) {
    if (p1.value().shape() != p2.value().shape() || q1.shape() != p1.value().shape() ||
        q2.shape() != p1.value().shape()) {
        throw DimensionError("swapped_cluster_loss: shape mismatch");
    }
    Var a = cross_entropy_weighted(q2, log_clamped(p1));
    Var b = cross_entropy_weighted(q1, log_clamped(p2));
    return scale(add(a, b), Real(0.5));
}

// The swapped cluster loss with assignments computed in each transformed space
// and the untransformed codes as targets, averaged over the M transforms.
inline Var consensus_loss(Var z1, Var z2, Var c, const Tensor& q1, const Tensor& q2, const TransformEnsemble& ens,
                          double tau) {
    if (ens.size() == 0) {
        throw ConfigError("consensus_loss needs a non-empty ensemble");
    }
    Tape& t = *z1.tape;
    ens.check_dim(z1.value().cols(), "embedding");
    ens.check_dim(c.value().rows(), "prototype");
    std::optional<Var> total;
    for (std::size_t m = 0; m < ens.size(); ++m) {
        const Tensor a = ens.dense(m);
        Var at = t.constant(transpose(a));
        Var ac = matmul(t.constant(a), c);
        Var p1 = soft_assign(matmul(z1, at), ac, tau);
        Var p2 = soft_assign(matmul(z2, at), ac, tau);
        Var lm = swapped_cluster_loss(p1, p2, q1, q2);
        total = total ? add(*total, lm) : lm;
    }
    return scale(*total, Real(1) / static_cast<Real>(ens.size()));
}

enum class Mode { concurl, byol, soft, byol_soft };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::concurl: return "concurl";
        case Mode::byol: return "byol";
        case Mode::soft: return "soft";
        case Mode::byol_soft: return "byol_soft";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "concurl") return Mode::concurl;
    if (s == "byol") return Mode::byol;
    if (s == "soft") return Mode::soft;
    if (s == "byol_soft") return Mode::byol_soft;
    throw ConfigError("unknown mode '" + s + "' (expected concurl, byol, soft or byol_soft)");
}

struct LossWeights {
    double alpha = 1;
    double beta = 1;
    double gamma = 1;

    static LossWeights for_mode(Mode m) {
        switch (m) {
            case Mode::concurl: return {1, 1, 1};
            case Mode::byol: return {1, 0, 0};
            case Mode::soft: return {0, 1, 0};
            case Mode::byol_soft: return {1, 1, 0};
        }
        return {};
    }

    void validate() const {
        if (!(alpha >= 0) || !(beta >= 0) || !(gamma >= 0)) {
            throw ConfigError("loss weights must be non-negative");
        }
    }
};

struct LossConfig {
    LossWeights weights;
    double tau = 0.1;
    SinkhornConfig sinkhorn;
};

struct LossBreakdown {
    std::optional<double> l1;
    std::optional<double> l2;
    std::optional<double> l3;
    double total = 0;
    LossWeights weights;
    Var total_var;  // on the bundle's tape; constant when every weight is 0
    Tensor q1;      // codes, when a clustering term was computed
    Tensor q2;
};

// Weighted sum with the codes supplied by the caller (they are targets, so no
// gradient flows through them).
inline LossBreakdown total_loss_with_codes(const ForwardBundle& f, const TransformEnsemble* ensemble,
                                           const LossConfig& cfg, const Tensor& q1, const Tensor& q2) {
    cfg.weights.validate();
    Tape& t = *f.prototypes.tape;
    LossBreakdown out;
    out.weights = cfg.weights;
    out.q1 = q1;
    out.q2 = q2;
    std::optional<Var> total;
    auto accumulate = [&](Var term, double weight) {
        Var w = scale(term, static_cast<Real>(weight));
        total = total ? add(*total, w) : w;
    };
    if (cfg.weights.alpha > 0) {
        Var l1 = byol_loss(f);
        out.l1 = l1.value()[0];
        accumulate(l1, cfg.weights.alpha);
    }
    if (cfg.weights.beta > 0) {
        Var p1 = soft_assign(f.views[0].z, f.prototypes, cfg.tau);
        Var p2 = soft_assign(f.views[1].z, f.prototypes, cfg.tau);
        Var l2 = swapped_cluster_loss(p1, p2, out.q1, out.q2);
        out.l2 = l2.value()[0];
        accumulate(l2, cfg.weights.beta);
    }
    if (cfg.weights.gamma > 0) {
        if (ensemble == nullptr) {
            throw ConfigError("consensus term requested without a transform ensemble");
        }
        Var l3 = consensus_loss(f.views[0].z, f.views[1].z, f.prototypes, out.q1, out.q2, *ensemble, cfg.tau);
        out.l3 = l3.value()[0];
        accumulate(l3, cfg.weights.gamma);
    }
    out.total_var = total ? *total : t.constant(Tensor({1}, Real(0)));
    out.total = out.total_var.value()[0];
    return out;
}

inline LossBreakdown total_loss(const ForwardBundle& f, const TransformEnsemble* ensemble, const LossConfig& cfg) {
    cfg.weights.validate();
    Tensor q1, q2;
    if (cfg.weights.beta > 0 || cfg.weights.gamma > 0) {
        const Tensor& c = f.prototypes.value();
        q1 = sinkhorn_codes(f.views[0].z.value(), c, cfg.sinkhorn);
        q2 = sinkhorn_codes(f.views[1].z.value(), c, cfg.sinkhorn);
    }
    return total_loss_with_codes(f, ensemble, cfg, q1, q2);
}

// Row-wise argmax, ties to the lowest index.
inline std::vector<int> hard_assign(const Tensor& q) {
    std::vector<int> labels(q.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        auto r = q.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < r.size(); ++j) {
            if (r[j] > r[best]) {
                best = j;
            }
        }
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

}  // namespace concurl
