#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/container.hpp"
#include "concurl/error.hpp"
#include "concurl/random.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

enum class TransformKind { gaussian_projection, diagonal };

inline std::string to_string(TransformKind k) {
    return k == TransformKind::gaussian_projection ? "gaussian_projection" : "diagonal";
}

inline TransformKind transform_kind_from_string(const std::string& s) {
    if (s == "gaussian_projection" || s == "projection") {
        return TransformKind::gaussian_projection;
    }
    if (s == "diagonal") {
        return TransformKind::diagonal;
    }
    throw ConfigError("unknown transform kind '" + s + "'");
}

// M fixed random maps of the cluster-embedding space. Projections store A as
// d_out x d; diagonal transforms store their scales as 1 x d.
struct TransformEnsemble {
    TransformKind kind = TransformKind::diagonal;
    std::size_t dim = 0;
    std::size_t out_dim = 0;
    std::uint64_t seed = 0;
    std::vector<Tensor> transforms;

    std::size_t size() const { return transforms.size(); }

    // A_m as a dense d_out x d matrix.
    Tensor dense(std::size_t m) const {
        const Tensor& t = transforms.at(m);
        if (kind == TransformKind::gaussian_projection) {
            return t;
        }
        Tensor a({dim, dim});
        for (std::size_t i = 0; i < dim; ++i) {
            a(i, i) = t[i];
        }
        return a;
    }

    // Rows of z [B x d] mapped to [B x d_out].
    Tensor apply_rows(std::size_t m, const Tensor& z) const {
        check_dim(z.cols(), "embedding");
        if (kind == TransformKind::gaussian_projection) {
            return matmul(z, transforms.at(m), false, true);
        }
        Tensor out = z;
        const Tensor& s = transforms.at(m);
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                out(i, j) *= s[j];
            }
        }
        return out;
    }

    // Prototype columns C [d x K] mapped to [d_out x K].
    Tensor apply_prototypes(std::size_t m, const Tensor& c) const {
        check_dim(c.rows(), "prototype");
        if (kind == TransformKind::gaussian_projection) {
            return matmul(transforms.at(m), c);
        }
        Tensor out = c;
        const Tensor& s = transforms.at(m);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(i, j) *= s[i];
            }
        }
        return out;
    }

    void check_dim(std::size_t got, const char* what) const {
        if (got != dim) {
            throw DimensionError(std::string("transform ensemble expects ") + what + " dimension " +
                                 std::to_string(dim) + ", got " + std::to_string(got));
        }
    }
};

inline TransformEnsemble make_gaussian_projections(std::size_t m, std::size_t d, std::size_t d_out,
                                                   std::uint64_t seed) {
    if (m < 1 || d < 1 || d_out < 1) {
        throw ConfigError("projection ensemble needs M, d, d_out >= 1");
    }
    if (d_out > d) {
        throw ConfigError("projection output dimension " + std::to_string(d_out) + " exceeds input dimension " +
                          std::to_string(d));
    }
    TransformEnsemble e{TransformKind::gaussian_projection, d, d_out, seed, {}};
    auto rng = make_rng(seed, {0x70726f6aULL});
    const Real gain = static_cast<Real>(std::sqrt(static_cast<double>(d) / static_cast<double>(d_out)));
    for (std::size_t t = 0; t < m; ++t) {
        Tensor a({d_out, d});
        for (std::size_t r = 0; r < d_out; ++r) {
            // Modified Gram-Schmidt against the accepted rows; redraw on near rank deficiency.
            for (;;) {
                std::vector<double> v(d);
                for (auto& x : v) {
                    x = normal(rng);
                }
                double raw = 0;
                for (auto x : v) {
                    raw += x * x;
                }
                raw = std::sqrt(raw);
                for (std::size_t p = 0; p < r; ++p) {
                    double dot = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dot += v[j] * a(p, j);
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        v[j] -= dot * a(p, j);
                    }
                }
                double norm = 0;
                for (auto x : v) {
                    norm += x * x;
                }
                norm = std::sqrt(norm);
                if (norm > 1e-6 * raw) {
                    for (std::size_t j = 0; j < d; ++j) {
                        a(r, j) = static_cast<Real>(v[j] / norm);
                    }
                    break;
                }
            }
        }
        a *= gain;
        e.transforms.push_back(std::move(a));
    }
    return e;
}

inline constexpr double kDiagonalScaleMin = 0.25;
inline constexpr double kDiagonalScaleMax = 4.0;

inline TransformEnsemble make_diagonal_transforms(std::size_t m, std::size_t d, std::uint64_t seed) {
    if (m < 1 || d < 1) {
        throw ConfigError("diagonal ensemble needs M, d >= 1");
    }
    TransformEnsemble e{TransformKind::diagonal, d, d, seed, {}};
    auto rng = make_rng(seed, {0x64696167ULL});
    const double lo = std::log(kDiagonalScaleMin);
    const double hi = std::log(kDiagonalScaleMax);
    for (std::size_t t = 0; t < m; ++t) {
        Tensor s({1, d});
        for (auto& v : s.data()) {
            v = static_cast<Real>(std::exp(uniform(rng, lo, hi)));
        }
        e.transforms.push_back(std::move(s));
    }
    return e;
}

// M copies of the identity map, expressed as unit diagonal scales.
inline TransformEnsemble identity_ensemble(std::size_t d, std::size_t m = 1) {
    if (m < 1 || d < 1) {
        throw ConfigError("identity ensemble needs M, d >= 1");
    }
    TransformEnsemble e{TransformKind::diagonal, d, d, 0, {}};
    for (std::size_t t = 0; t < m; ++t) {
        e.transforms.emplace_back(Shape{1, d}, Real(1));
    }
    return e;
}

struct EnsembleConfig {
    TransformKind kind = TransformKind::gaussian_projection;
    std::size_t num_transforms = 10;
    std::size_t out_dim = 0;  // 0 selects d / 4 for projections
    std::uint64_t seed = 0;

    void validate() const {
        if (num_transforms < 1) {
            throw ConfigError("ensemble needs at least one transform");
        }
    }
};

inline nlohmann::json to_json(const EnsembleConfig& c) {
    return {{"kind", to_string(c.kind)}, {"M", c.num_transforms}, {"d_out", c.out_dim}, {"seed", c.seed}};
}

inline EnsembleConfig ensemble_config_from_json(const nlohmann::json& j) {
    EnsembleConfig c;
    if (j.contains("kind")) c.kind = transform_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("M")) {
        if (j.at("M").get<long long>() < 1) throw ConfigError("ensemble M must be >= 1");
        c.num_transforms = j.at("M").get<std::size_t>();
    }
    if (j.contains("d_out")) {
        if (j.at("d_out").get<long long>() < 0) throw ConfigError("ensemble d_out must be >= 0");
        c.out_dim = j.at("d_out").get<std::size_t>();
    }
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline TransformEnsemble make_ensemble(const EnsembleConfig& c, std::size_t d) {
    c.validate();
    if (c.kind == TransformKind::diagonal) {
        return make_diagonal_transforms(c.num_transforms, d, c.seed);
    }
    const std::size_t d_out = c.out_dim == 0 ? std::max<std::size_t>(1, d / 4) : c.out_dim;
    return make_gaussian_projections(c.num_transforms, d, d_out, c.seed);
}

inline constexpr const char* kEnsembleFormat = "concurl-ensemble";

inline Container ensemble_to_container(const TransformEnsemble& e) {
    Container c;
    c.header = {{"format", kEnsembleFormat},
                {"kind", to_string(e.kind)},
                {"M", e.size()},
                {"d", e.dim},
                {"d_out", e.out_dim},
                {"seed", e.seed}};
    for (std::size_t m = 0; m < e.size(); ++m) {
        c.blobs.push_back({"transform." + std::to_string(m), e.transforms[m]});
    }
    return c;
}

inline TransformEnsemble ensemble_from_container(const Container& c) {
    if (!c.header.is_object() || c.header.value("format", "") != kEnsembleFormat) {
        throw FormatError("container does not hold a transform ensemble");
    }
    TransformEnsemble e;
    std::size_t m = 0;
    try {
        e.kind = transform_kind_from_string(c.header.at("kind").get<std::string>());
        e.dim = c.header.at("d").get<std::size_t>();
        e.out_dim = c.header.at("d_out").get<std::size_t>();
        e.seed = c.header.at("seed").get<std::uint64_t>();
        m = c.header.at("M").get<std::size_t>();
    } catch (const std::exception& ex) {
        throw FormatError(std::string("corrupt ensemble header: ") + ex.what());
    }
    const Shape expect = e.kind == TransformKind::diagonal ? Shape{1, e.dim} : Shape{e.out_dim, e.dim};
    if (m < 1 || c.blobs.size() != m) {
        throw FormatError("ensemble blob count does not match M");
    }
    for (std::size_t t = 0; t < m; ++t) {
        const Tensor& a = c.blob("transform." + std::to_string(t));
        if (a.shape() != expect) {
            throw FormatError("ensemble transform " + std::to_string(t) + " has shape " + shape_string(a.shape()));
        }
        e.transforms.push_back(a);
    }
    return e;
}

inline void save_ensemble(const std::filesystem::path& path, const TransformEnsemble& e) {
    save_container(path, ensemble_to_container(e));
}

inline TransformEnsemble load_ensemble(const std::filesystem::path& path) {
    return ensemble_from_container(load_container(path));
}

}  // namespace concurl
