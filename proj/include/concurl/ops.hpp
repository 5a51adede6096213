#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "concurl/tape.hpp"

// Differentiable operations over Var. Backward callbacks read forward values
// back from the tape instead of capturing copies.
namespace concurl {

inline constexpr Real kNormEps = Real(1e-12);
inline constexpr Real kLogFloor = Real(1e-12);

namespace detail {

inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) {
        throw Error("operands recorded on different tapes");
    }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tensor out = matmul(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            t.accumulate(a, matmul(g, t.value(b), false, true));
        }
        if (t.requires_grad(b)) {
            t.accumulate(b, matmul(t.value(a), g, true, false));
        }
    });
}

inline Var transpose(Var a) {
    return a.tape->record(transpose(a.value()), {a}, [a](Tape& t, const Tensor& g) {
        t.accumulate(a, transpose(g));
    });
}

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b);
    a.value().require_same_shape(b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

inline Var sub(Var a, Var b) {
    detail::require_same_tape(a, b);
    a.value().require_same_shape(b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= b.value()[i];
    }
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        Tensor neg = g;
        neg *= Real(-1);
        t.accumulate(b, neg);
    });
}

inline Var scale(Var a, Real s) {
    Tensor out = a.value();
    out *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        Tensor ga = g;
        ga *= s;
        t.accumulate(a, ga);
    });
}

// Elementwise product of equally shaped tensors.
inline Var mul(Var a, Var b) {
    detail::require_same_tape(a, b);
    a.value().require_same_shape(b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] *= t.value(b)[i];
            }
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] *= t.value(a)[i];
            }
            t.accumulate(b, gb);
        }
    });
}

// x[m x n] + row[1 x n] broadcast over rows.
inline Var add_row(Var x, Var row) {
    detail::require_same_tape(x, row);
    const auto& xv = x.value();
    const auto& rv = row.value();
    if (rv.size() != xv.cols()) {
        throw DimensionError("add_row: row of " + shape_string(rv.shape()) + " for " + shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            out(i, j) += rv[j];
        }
    }
    return x.tape->record(std::move(out), {x, row}, [x, row](Tape& t, const Tensor& g) {
        t.accumulate(x, g);
        if (t.requires_grad(row)) {
            Tensor gr(t.value(row).shape());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    gr[j] += g(i, j);
                }
            }
            t.accumulate(row, gr);
        }
    });
}

// x[m x n] * row[1 x n] broadcast over rows (per-column scaling).
inline Var mul_row(Var x, Var row) {
    detail::require_same_tape(x, row);
    const auto& xv = x.value();
    const auto& rv = row.value();
    if (rv.size() != xv.cols()) {
        throw DimensionError("mul_row: row of " + shape_string(rv.shape()) + " for " + shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            out(i, j) *= rv[j];
        }
    }
    return x.tape->record(std::move(out), {x, row}, [x, row](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        const auto& rv = t.value(row);
        if (t.requires_grad(x)) {
            Tensor gx = g;
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    gx(i, j) *= rv[j];
                }
            }
            t.accumulate(x, gx);
        }
        if (t.requires_grad(row)) {
            Tensor gr(rv.shape());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    gr[j] += g(i, j) * xv(i, j);
                }
            }
            t.accumulate(row, gr);
        }
    });
}

inline Var relu(Var x) {
    Tensor out = x.value();
    for (auto& v : out.data()) {
        v = std::max(v, Real(0));
    }
    return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor gx = g;
        const auto& xv = t.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (!(xv[i] > 0)) {
                gx[i] = 0;
            }
        }
        t.accumulate(x, gx);
    });
}

// v / max(||v||, eps), applied to every row (a rank-1 input is one row).
inline Var l2_normalize(Var x, Real eps = kNormEps) {
    const auto& xv = x.value();
    const std::size_t m = xv.rows();
    const std::size_t n = xv.cols();
    Tensor out = xv;
    std::vector<Real> denom(m);
    for (std::size_t i = 0; i < m; ++i) {
        Real ss = 0;
        for (std::size_t j = 0; j < n; ++j) {
            ss += xv(i, j) * xv(i, j);
        }
        denom[i] = std::max(std::sqrt(ss), eps);
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) /= denom[i];
        }
    }
    return x.tape->record(std::move(out), {x}, [x, eps, denom = std::move(denom)](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        Tensor gx(xv.shape());
        const std::size_t m = xv.rows();
        const std::size_t n = xv.cols();
        for (std::size_t i = 0; i < m; ++i) {
            const Real d = denom[i];
            if (d <= eps) {
                // Guarded branch: output = v / eps, a linear map.
                for (std::size_t j = 0; j < n; ++j) {
                    gx(i, j) = g(i, j) / eps;
                }
                continue;
            }
            Real dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += g(i, j) * xv(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                gx(i, j) = g(i, j) / d - xv(i, j) * dot / (d * d * d);
            }
        }
        t.accumulate(x, gx);
    });
}

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& s) {
    Tensor out(s.shape());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto in = s.row(i);
        Real mx = -std::numeric_limits<Real>::infinity();
        for (auto v : in) {
            if (std::isnan(v)) {
                throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
            }
            mx = std::max(mx, v);
        }
        if (!std::isfinite(mx)) {
            throw NumericError("softmax_rows: non-finite input in row " + std::to_string(i));
        }
        auto o = out.row(i);
        Real total = 0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (auto& v : o) {
            v /= total;
        }
    }
    return out;
}

inline Var softmax_rows(Var s) {
    const Var out{s.tape, s.tape->size()};
    return s.tape->record(softmax_rows(s.value()), {s}, [s, out](Tape& t, const Tensor& g) {
        const Tensor& p = t.value(out);
        Tensor gs(p.shape());
        for (std::size_t i = 0; i < p.rows(); ++i) {
            Real dot = 0;
            for (std::size_t j = 0; j < p.cols(); ++j) {
                dot += g(i, j) * p(i, j);
            }
            for (std::size_t j = 0; j < p.cols(); ++j) {
                gs(i, j) = p(i, j) * (g(i, j) - dot);
            }
        }
        t.accumulate(s, gs);
    });
}

// log(max(x, floor)); the gradient is zero where the floor is active.
inline Var log_clamped(Var x, Real floor = kLogFloor) {
    Tensor out = x.value();
    for (auto& v : out.data()) {
        v = std::log(std::max(v, floor));
    }
    return x.tape->record(std::move(out), {x}, [x, floor](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        Tensor gx(xv.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] = xv[i] > floor ? g[i] / xv[i] : Real(0);
        }
        t.accumulate(x, gx);
    });
}

inline Var sum(Var x) {
    return x.tape->record(Tensor({1}, x.value().sum()), {x}, [x](Tape& t, const Tensor& g) {
        t.accumulate(x, Tensor(t.value(x).shape(), g[0]));
    });
}

inline Var mean(Var x) { return scale(sum(x), Real(1) / static_cast<Real>(x.value().size())); }

inline Var sum_squares(Var x) {
    Real ss = 0;
    for (auto v : x.value().data()) {
        ss += v * v;
    }
    return x.tape->record(Tensor({1}, ss), {x}, [x](Tape& t, const Tensor& g) {
        Tensor gx = t.value(x);
        gx *= Real(2) * g[0];
        t.accumulate(x, gx);
    });
}

// -(1/m) * sum_ij q_ij * log_p_ij. q is a constant target; no gradient reaches it.
inline Var cross_entropy_weighted(const Tensor& q, Var log_p) {
    const auto& lp = log_p.value();
    q.require_same_shape(lp, "cross_entropy_weighted");
    const std::size_t m = lp.rows();
    Real total = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] < 0) {
            throw NumericError("cross_entropy_weighted: negative target weight");
        }
        total += q[i] * lp[i];
    }
    const Real inv_m = Real(1) / static_cast<Real>(m);
    return log_p.tape->record(Tensor({1}, -total * inv_m), {log_p}, [log_p, q, inv_m](Tape& t, const Tensor& g) {
        Tensor gl = q;
        gl *= -inv_m * g[0];
        t.accumulate(log_p, gl);
    });
}

// Statistics produced by a training-mode batch-norm pass.
struct BatchStats {
    std::vector<Real> mean;
    std::vector<Real> var;  // biased
};

// Per-column batch normalization with learned affine (gamma, beta), using the
// batch statistics. A single-row batch passes through unchanged.
inline Var batch_norm(Var x, Var gamma, Var beta, Real eps, BatchStats* stats = nullptr) {
    const auto& xv = x.value();
    const std::size_t m = xv.rows();
    const std::size_t n = xv.cols();
    if (gamma.value().size() != n || beta.value().size() != n) {
        throw DimensionError("batch_norm: affine parameters do not match " + shape_string(xv.shape()));
    }
    if (m < 2) {
        return x;
    }
    std::vector<Real> mu(n, 0), var(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            mu[j] += xv(i, j);
        }
    }
    for (auto& v : mu) {
        v /= static_cast<Real>(m);
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const Real d = xv(i, j) - mu[j];
            var[j] += d * d;
        }
    }
    for (auto& v : var) {
        v /= static_cast<Real>(m);
    }
    std::vector<Real> inv_std(n);
    for (std::size_t j = 0; j < n; ++j) {
        inv_std[j] = Real(1) / std::sqrt(var[j] + eps);
    }
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (xv(i, j) - mu[j]) * inv_std[j];
            out(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    }
    if (stats != nullptr) {
        stats->mean = mu;
        stats->var = var;
    }
    return x.tape->record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
            const std::size_t m = g.rows();
            const std::size_t n = g.cols();
            std::vector<Real> sum_g(n, 0), sum_gx(n, 0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    sum_g[j] += g(i, j);
                    sum_gx[j] += g(i, j) * xhat(i, j);
                }
            }
            if (t.requires_grad(gamma)) {
                t.accumulate(gamma, Tensor(t.value(gamma).shape(), sum_gx));
            }
            if (t.requires_grad(beta)) {
                t.accumulate(beta, Tensor(t.value(beta).shape(), sum_g));
            }
            if (t.requires_grad(x)) {
                const auto& gv = t.value(gamma);
                Tensor gx(g.shape());
                const Real inv_m = Real(1) / static_cast<Real>(m);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gx(i, j) = gv[j] * inv_std[j] *
                                   (g(i, j) - sum_g[j] * inv_m - xhat(i, j) * sum_gx[j] * inv_m);
                    }
                }
                t.accumulate(x, gx);
            }
        });
}

}  // namespace concurl
