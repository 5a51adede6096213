#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "concurl/container.hpp"
#include "concurl/error.hpp"
#include "concurl/ops.hpp"
#include "concurl/random.hpp"
#include "concurl/tape.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

// Two-layer head: linear(in, hidden) -> [BN] -> ReLU -> linear(hidden, out).
struct HeadSpec {
    std::size_t hidden = 256;
    std::size_t out = 64;

    bool operator==(const HeadSpec&) const = default;
};

struct NetworkSpec {
    // input -> hidden* -> rep_dim; every encoder layer is linear -> [BN] -> ReLU.
    std::vector<std::size_t> encoder_layers;
    HeadSpec projector{256, 64};
    HeadSpec predictor{256, 64};
    HeadSpec cluster_projector{256, 64};
    bool batch_norm = true;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    static NetworkSpec for_input(std::size_t input_dim) {
        NetworkSpec spec;
        spec.encoder_layers = {input_dim, 256, 128};
        return spec;
    }

    std::size_t input_dim() const { return encoder_layers.front(); }
    std::size_t rep_dim() const { return encoder_layers.back(); }
    std::size_t cluster_dim() const { return cluster_projector.out; }

    void validate() const {
        if (encoder_layers.size() < 2) {
            throw ConfigError("encoder_layers needs at least an input and an output width");
        }
        for (auto w : encoder_layers) {
            if (w == 0) {
                throw ConfigError("network widths must be positive");
            }
        }
        for (const auto* h : {&projector, &predictor, &cluster_projector}) {
            if (h->hidden == 0 || h->out == 0) {
                throw ConfigError("network widths must be positive");
            }
        }
        if (projector.out != predictor.out) {
            throw ConfigError("projector and predictor output widths must match");
        }
        if (!(bn_momentum > 0 && bn_momentum <= 1) || !(bn_eps > 0)) {
            throw ConfigError("batch-norm momentum must lie in (0, 1] and eps must be positive");
        }
    }

    bool operator==(const NetworkSpec&) const = default;
};

namespace detail {

inline std::size_t positive_width(const nlohmann::json& j) {
    if (!j.is_number_integer() || j.get<long long>() <= 0) {
        throw ConfigError("network widths must be positive integers, got " + j.dump());
    }
    return j.get<std::size_t>();
}

inline HeadSpec head_from_json(const nlohmann::json& j, const char* name) {
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError(std::string(name) + " must be [hidden_width, out_dim]");
    }
    return {positive_width(j[0]), positive_width(j[1])};
}

}  // namespace detail

inline nlohmann::json to_json(const NetworkSpec& s) {
    return {{"encoder_layers", s.encoder_layers},
            {"projector", {s.projector.hidden, s.projector.out}},
            {"predictor", {s.predictor.hidden, s.predictor.out}},
            {"cluster_projector", {s.cluster_projector.hidden, s.cluster_projector.out}},
            {"activation", "relu"},
            {"batch_norm", s.batch_norm},
            {"bn_momentum", s.bn_momentum},
            {"bn_eps", s.bn_eps}};
}

// Missing fields keep their defaults; `input_dim` fills encoder_layers when absent.
inline NetworkSpec network_spec_from_json(const nlohmann::json& j, std::size_t input_dim = 0) {
    NetworkSpec s = NetworkSpec::for_input(input_dim == 0 ? 1 : input_dim);
    if (!j.is_object()) {
        throw ConfigError("network spec must be a JSON object");
    }
    if (j.contains("encoder_layers")) {
        s.encoder_layers.clear();
        for (const auto& w : j.at("encoder_layers")) {
            s.encoder_layers.push_back(detail::positive_width(w));
        }
    } else if (j.contains("encoder_hidden")) {
        s.encoder_layers = {s.encoder_layers.front()};
        for (const auto& w : j.at("encoder_hidden")) {
            s.encoder_layers.push_back(detail::positive_width(w));
        }
    }
    if (input_dim != 0 && !s.encoder_layers.empty()) {
        s.encoder_layers.front() = input_dim;
    }
    if (j.contains("projector")) s.projector = detail::head_from_json(j.at("projector"), "projector");
    if (j.contains("predictor")) s.predictor = detail::head_from_json(j.at("predictor"), "predictor");
    if (j.contains("cluster_projector")) {
        s.cluster_projector = detail::head_from_json(j.at("cluster_projector"), "cluster_projector");
    }
    if (j.contains("activation") && j.at("activation") != "relu") {
        throw ConfigError("only the relu activation is supported");
    }
    s.batch_norm = j.value("batch_norm", s.batch_norm);
    s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
    s.bn_eps = j.value("bn_eps", s.bn_eps);
    s.validate();
    return s;
}

enum class BnMode { train, eval };

struct Layer {
    Parameter weight;  // in x out
    Parameter bias;    // 1 x out
    bool has_bn = false;
    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    bool relu = true;
};

struct Mlp {
    std::string name;
    std::vector<Layer> layers;

    std::size_t in_dim() const { return layers.front().weight.value.rows(); }
    std::size_t out_dim() const { return layers.back().weight.value.cols(); }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (auto& l : layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
            if (l.has_bn) {
                out.push_back(&l.gamma);
                out.push_back(&l.beta);
            }
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> buffers() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].has_bn) {
                const std::string base = name + "." + std::to_string(i) + ".bn.";
                out.emplace_back(base + "running_mean", &layers[i].running_mean);
                out.emplace_back(base + "running_var", &layers[i].running_var);
            }
        }
        return out;
    }
};

struct MlpPassOptions {
    bool trainable = true;     // parameters enter the tape as leaves, else as constants
    BnMode mode = BnMode::train;
    bool update_running = true;
    Real momentum = Real(0.1);
    Real eps = Real(1e-5);
};

inline Layer make_layer(const std::string& name, std::size_t in, std::size_t out, bool bn, bool relu_after,
                        Rng& rng) {
    Layer l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w({in, out});
    for (auto& v : w.data()) {
        v = static_cast<Real>(uniform(rng, -bound, bound));
    }
    Tensor b({1, out});
    for (auto& v : b.data()) {
        v = static_cast<Real>(uniform(rng, -bound, bound));
    }
    l.weight = Parameter(name + ".weight", std::move(w));
    l.bias = Parameter(name + ".bias", std::move(b));
    l.has_bn = bn;
    if (bn) {
        l.gamma = Parameter(name + ".bn.gamma", Tensor({1, out}, Real(1)));
        l.beta = Parameter(name + ".bn.beta", Tensor({1, out}, Real(0)));
        l.running_mean = Tensor({1, out}, Real(0));
        l.running_var = Tensor({1, out}, Real(1));
    }
    l.relu = relu_after;
    return l;
}

inline Mlp make_encoder(const std::string& name, const NetworkSpec& spec, Rng& rng) {
    Mlp m{name, {}};
    for (std::size_t i = 0; i + 1 < spec.encoder_layers.size(); ++i) {
        m.layers.push_back(make_layer(name + "." + std::to_string(i), spec.encoder_layers[i],
                                      spec.encoder_layers[i + 1], spec.batch_norm, true, rng));
    }
    return m;
}

inline Mlp make_head(const std::string& name, std::size_t in, const HeadSpec& head, bool bn, Rng& rng) {
    Mlp m{name, {}};
    m.layers.push_back(make_layer(name + ".0", in, head.hidden, bn, true, rng));
    m.layers.push_back(make_layer(name + ".1", head.hidden, head.out, false, false, rng));
    return m;
}

inline Var apply_layer(Tape& tape, Layer& l, Var x, const MlpPassOptions& opt) {
    auto bind = [&](Parameter& p) { return opt.trainable ? tape.leaf(p) : tape.constant(p.value); };
    Var h = add_row(matmul(x, bind(l.weight)), bind(l.bias));
    if (l.has_bn) {
        if (opt.mode == BnMode::train) {
            BatchStats stats;
            const std::size_t m = h.value().rows();
            h = batch_norm(h, bind(l.gamma), bind(l.beta), opt.eps, &stats);
            if (opt.update_running && m > 1) {
                const Real unbias = static_cast<Real>(m) / static_cast<Real>(m - 1);
                for (std::size_t j = 0; j < stats.mean.size(); ++j) {
                    l.running_mean[j] = (1 - opt.momentum) * l.running_mean[j] + opt.momentum * stats.mean[j];
                    l.running_var[j] =
                        (1 - opt.momentum) * l.running_var[j] + opt.momentum * stats.var[j] * unbias;
                }
            }
        } else {
            // Frozen statistics fold into a per-column affine map.
            const std::size_t n = l.running_mean.size();
            Tensor scale_row({1, n});
            Tensor shift_row({1, n});
            for (std::size_t j = 0; j < n; ++j) {
                const Real inv = Real(1) / std::sqrt(l.running_var[j] + opt.eps);
                scale_row[j] = l.gamma.value[j] * inv;
                shift_row[j] = l.beta.value[j] - l.running_mean[j] * scale_row[j];
            }
            h = add_row(mul_row(h, tape.constant(std::move(scale_row))), tape.constant(std::move(shift_row)));
        }
    }
    return l.relu ? relu(h) : h;
}

inline Var apply_mlp(Tape& tape, Mlp& mlp, Var x, const MlpPassOptions& opt) {
    if (x.value().cols() != mlp.in_dim()) {
        throw DimensionError(mlp.name + ": expected input width " + std::to_string(mlp.in_dim()) + ", got " +
                             shape_string(x.value().shape()));
    }
    for (auto& l : mlp.layers) {
        x = apply_layer(tape, l, x, opt);
    }
    return x;
}

struct ModelState {
    NetworkSpec spec;
    int num_clusters = 0;
    double tau_b = 0.99;

    // theta
    Mlp online_encoder;
    Mlp online_projector;
    Mlp predictor;
    Mlp cluster_projector;
    Parameter prototypes;  // d x K, stored unnormalized

    // xi
    Mlp target_encoder;
    Mlp target_projector;

    std::vector<Parameter*> online_parameters() {
        std::vector<Parameter*> out;
        for (auto* m : {&online_encoder, &online_projector, &predictor, &cluster_projector}) {
            auto p = m->parameters();
            out.insert(out.end(), p.begin(), p.end());
        }
        out.push_back(&prototypes);
        return out;
    }

    std::vector<Parameter*> target_parameters() {
        std::vector<Parameter*> out;
        for (auto* m : {&target_encoder, &target_projector}) {
            auto p = m->parameters();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

    // Online parameters mirrored by the target, in the same order as target_parameters().
    std::vector<Parameter*> mirrored_online_parameters() {
        std::vector<Parameter*> out;
        for (auto* m : {&online_encoder, &online_projector}) {
            auto p = m->parameters();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> buffers() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (auto* m : {&online_encoder, &online_projector, &predictor, &cluster_projector, &target_encoder,
                        &target_projector}) {
            auto b = m->buffers();
            out.insert(out.end(), b.begin(), b.end());
        }
        return out;
    }

    void zero_grad() {
        for (auto* p : online_parameters()) {
            p->zero_grad();
        }
        for (auto* p : target_parameters()) {
            p->zero_grad();
        }
    }
};

inline void copy_mlp_values(const Mlp& from, Mlp& to) {
    for (std::size_t i = 0; i < from.layers.size(); ++i) {
        const auto& a = from.layers[i];
        auto& b = to.layers[i];
        b.weight.value = a.weight.value;
        b.bias.value = a.bias.value;
        if (a.has_bn) {
            b.gamma.value = a.gamma.value;
            b.beta.value = a.beta.value;
            b.running_mean = a.running_mean;
            b.running_var = a.running_var;
        }
    }
}

inline ModelState init_model(const NetworkSpec& spec, int num_clusters, std::uint64_t seed, double tau_b = 0.99) {
    spec.validate();
    if (num_clusters < 2) {
        throw ConfigError("the model needs K >= 2 prototypes");
    }
    if (!(tau_b >= 0 && tau_b <= 1)) {
        throw ConfigError("tau_b must lie in [0, 1]");
    }
    ModelState s;
    s.spec = spec;
    s.num_clusters = num_clusters;
    s.tau_b = tau_b;
    auto rng = make_rng(seed, {0x6d6f64656cULL});
    const std::size_t rep = spec.rep_dim();
    s.online_encoder = make_encoder("online.encoder", spec, rng);
    s.online_projector = make_head("online.projector", rep, spec.projector, spec.batch_norm, rng);
    s.predictor = make_head("online.predictor", spec.projector.out, spec.predictor, spec.batch_norm, rng);
    s.cluster_projector = make_head("online.cluster_projector", rep, spec.cluster_projector, spec.batch_norm, rng);

    const std::size_t d = spec.cluster_dim();
    const auto k = static_cast<std::size_t>(num_clusters);
    Tensor c({d, k});
    for (auto& v : c.data()) {
        v = static_cast<Real>(normal(rng));
    }
    for (std::size_t j = 0; j < k; ++j) {
        Real norm = 0;
        for (std::size_t i = 0; i < d; ++i) {
            norm += c(i, j) * c(i, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < d; ++i) {
            c(i, j) /= norm;
        }
    }
    s.prototypes = Parameter("online.prototypes", std::move(c));

    // Built with the same shapes and names, then overwritten by the online values.
    Rng scratch = make_rng(0);
    s.target_encoder = make_encoder("target.encoder", spec, scratch);
    s.target_projector = make_head("target.projector", rep, spec.projector, spec.batch_norm, scratch);
    copy_mlp_values(s.online_encoder, s.target_encoder);
    copy_mlp_values(s.online_projector, s.target_projector);
    return s;
}

// xi <- tau_b * xi + (1 - tau_b) * theta over every mirrored parameter.
inline void ema_update(ModelState& s) {
    auto xi = s.target_parameters();
    auto theta = s.mirrored_online_parameters();
    const Real tau = static_cast<Real>(s.tau_b);
    for (std::size_t i = 0; i < xi.size(); ++i) {
        auto xd = xi[i]->value.data();
        auto td = theta[i]->value.data();
        for (std::size_t k = 0; k < xd.size(); ++k) {
            xd[k] = tau * xd[k] + (1 - tau) * td[k];
        }
    }
}

struct ViewEmbeddings {
    Var y;  // online representation
    Var v;  // online projection
    Var w;  // online prediction
    Var z;  // cluster embedding
    Tensor y_target;
    Tensor v_target;
};

struct ForwardBundle {
    std::array<ViewEmbeddings, 2> views;
    Var prototypes;
};

inline MlpPassOptions pass_options(const ModelState& s, bool trainable, BnMode mode) {
    MlpPassOptions o;
    o.trainable = trainable;
    o.mode = mode;
    o.momentum = static_cast<Real>(s.spec.bn_momentum);
    o.eps = static_cast<Real>(s.spec.bn_eps);
    return o;
}

inline ViewEmbeddings forward_view(ModelState& s, Tape& tape, const Tensor& x, BnMode mode) {
    if (x.rank() != 2 || x.cols() != s.spec.input_dim()) {
        throw DimensionError("forward: expected a batch of width " + std::to_string(s.spec.input_dim()) + ", got " +
                             shape_string(x.shape()));
    }
    const auto online = pass_options(s, true, mode);
    const auto target = pass_options(s, false, mode);
    ViewEmbeddings e;
    Var in = tape.constant(x);
    e.y = apply_mlp(tape, s.online_encoder, in, online);
    e.v = apply_mlp(tape, s.online_projector, e.y, online);
    e.w = apply_mlp(tape, s.predictor, e.v, online);
    e.z = apply_mlp(tape, s.cluster_projector, e.y, online);
    Var yt = apply_mlp(tape, s.target_encoder, in, target);
    Var vt = apply_mlp(tape, s.target_projector, yt, target);
    e.y_target = yt.value();
    e.v_target = vt.value();
    return e;
}

inline ForwardBundle forward(ModelState& s, Tape& tape, const Tensor& view1, const Tensor& view2,
                             BnMode mode = BnMode::train) {
    if (view1.shape() != view2.shape()) {
        throw DimensionError("forward: views have shapes " + shape_string(view1.shape()) + " and " +
                             shape_string(view2.shape()));
    }
    ForwardBundle b;
    b.views[0] = forward_view(s, tape, view1, mode);
    b.views[1] = forward_view(s, tape, view2, mode);
    b.prototypes = tape.leaf(s.prototypes);
    return b;
}

// Gradient-free embeddings of one batch, as used for evaluation.
struct Embeddings {
    Tensor y;
    Tensor z;
    Tensor v_target;
};

inline Embeddings embed(ModelState& s, const Tensor& x, BnMode mode = BnMode::eval) {
    Tape tape;
    auto opt = pass_options(s, false, mode);
    opt.update_running = false;
    Var in = tape.constant(x);
    Embeddings e;
    Var y = apply_mlp(tape, s.online_encoder, in, opt);
    e.y = y.value();
    e.z = apply_mlp(tape, s.cluster_projector, y, opt).value();
    Var yt = apply_mlp(tape, s.target_encoder, in, opt);
    e.v_target = apply_mlp(tape, s.target_projector, yt, opt).value();
    return e;
}

inline constexpr const char* kModelFormat = "concurl-model";

inline Container model_to_container(ModelState& s, const nlohmann::json& extra = nlohmann::json::object()) {
    Container c;
    c.header = {{"format", kModelFormat},
                {"spec", to_json(s.spec)},
                {"num_clusters", s.num_clusters},
                {"extra", extra}};
    c.tau_b = s.tau_b;
    for (auto* p : s.online_parameters()) {
        c.blobs.push_back({p->name, p->value});
    }
    for (auto* p : s.target_parameters()) {
        c.blobs.push_back({p->name, p->value});
    }
    for (auto& [name, t] : s.buffers()) {
        c.blobs.push_back({name, *t});
    }
    return c;
}

struct LoadedModel {
    ModelState state;
    nlohmann::json extra;
};

inline LoadedModel model_from_container(const Container& c) {
    if (!c.header.is_object() || c.header.value("format", "") != kModelFormat) {
        throw FormatError("container does not hold a model checkpoint");
    }
    NetworkSpec spec;
    int k = 0;
    try {
        spec = network_spec_from_json(c.header.at("spec"));
        k = c.header.at("num_clusters").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("corrupt checkpoint spec: ") + e.what());
    }
    if (!(c.tau_b >= 0 && c.tau_b <= 1)) {
        throw FormatError("corrupt checkpoint: tau_b outside [0, 1]");
    }
    LoadedModel out{init_model(spec, k, 0, c.tau_b), c.header.value("extra", nlohmann::json::object())};
    auto& s = out.state;
    std::size_t used = 0;
    auto assign = [&](const std::string& name, Tensor& dst) {
        const Tensor& src = c.blob(name);
        if (src.shape() != dst.shape()) {
            throw FormatError("checkpoint blob '" + name + "' has shape " + shape_string(src.shape()) +
                              ", expected " + shape_string(dst.shape()));
        }
        dst = src;
        ++used;
    };
    for (auto* p : s.online_parameters()) {
        assign(p->name, p->value);
    }
    for (auto* p : s.target_parameters()) {
        assign(p->name, p->value);
    }
    for (auto& [name, t] : s.buffers()) {
        assign(name, *t);
    }
    if (used != c.blobs.size()) {
        throw FormatError("checkpoint holds unexpected blobs");
    }
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, ModelState& s,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    save_container(path, model_to_container(s, extra));
}

inline LoadedModel load_checkpoint(const std::filesystem::path& path) {
    return model_from_container(load_container(path));
}

}  // namespace concurl
