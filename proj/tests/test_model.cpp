#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "concurl/model.hpp"
#include "support/toy.hpp"

using namespace concurl;
using concurl::testing::gaussian_matrix;
using concurl::testing::toy_spec;
namespace fs = std::filesystem;

namespace {

double param_distance(ModelState& s) {
    auto xi = s.target_parameters();
    auto th = s.mirrored_online_parameters();
    double ss = 0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        for (std::size_t k = 0; k < xi[i]->value.size(); ++k) {
            const double d = xi[i]->value[k] - th[i]->value[k];
            ss += d * d;
        }
    }
    return std::sqrt(ss);
}

// Moves theta away from xi so that EMA has something to do.
void perturb_online(ModelState& s, std::uint64_t seed) {
    auto rng = make_rng(seed);
    for (auto* p : s.mirrored_online_parameters()) {
        for (auto& v : p->value.data()) {
            v += static_cast<Real>(normal(rng, 0.0, 0.3));
        }
    }
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() /
           ("concurl_model_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            name);
}

}  // namespace

TEST(InitModel, SameSeedIsBitIdentical) {
    auto a = init_model(toy_spec(), 3, 42);
    auto b = init_model(toy_spec(), 3, 42);
    auto pa = a.online_parameters();
    auto pb = b.online_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    }
    auto c = init_model(toy_spec(), 3, 43);
    EXPECT_NE(a.online_encoder.layers[0].weight.value, c.online_encoder.layers[0].weight.value);
}

TEST(InitModel, TargetIsExactCopy) {
    auto s = init_model(toy_spec(), 3, 1);
    EXPECT_EQ(param_distance(s), 0.0);
    auto xi = s.target_parameters();
    auto th = s.mirrored_online_parameters();
    ASSERT_EQ(xi.size(), th.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        EXPECT_EQ(xi[i]->value.shape(), th[i]->value.shape());
        EXPECT_EQ(xi[i]->name.substr(7), th[i]->name.substr(7));
    }
}

TEST(InitModel, WeightSpreadMatchesFanInScaling) {
    NetworkSpec spec = toy_spec();
    spec.encoder_layers = {100, 100, 8};
    auto s = init_model(spec, 2, 5);
    const auto& w = s.online_encoder.layers[0].weight.value;
    ASSERT_EQ(w.size(), 10000u);
    double mean = 0;
    for (auto v : w.data()) mean += v;
    mean /= 10000.0;
    double var = 0;
    for (auto v : w.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 10000.0);
    // U(-1/sqrt(n), 1/sqrt(n)) has standard deviation 1/sqrt(3n).
    const double target = 1.0 / std::sqrt(3.0 * 100.0);
    EXPECT_NEAR(sd / target, 1.0, 0.1);
}

TEST(InitModel, PrototypesAreUnitColumns) {
    auto s = init_model(toy_spec(), 5, 2);
    const auto& c = s.prototypes.value;
    ASSERT_EQ(c.shape(), (Shape{8, 5}));
    for (std::size_t j = 0; j < 5; ++j) {
        double ss = 0;
        for (std::size_t i = 0; i < 8; ++i) ss += c(i, j) * c(i, j);
        EXPECT_NEAR(ss, 1.0, 1e-12);
    }
}

TEST(InitModel, InvalidSpecsRejected) {
    auto spec = toy_spec();
    spec.encoder_layers = {8, 0, 8};
    EXPECT_THROW(init_model(spec, 3, 0), ConfigError);
    spec = toy_spec();
    spec.predictor.out = 4;
    EXPECT_THROW(init_model(spec, 3, 0), ConfigError);
    EXPECT_THROW(init_model(toy_spec(), 1, 0), ConfigError);
    EXPECT_THROW(init_model(toy_spec(), 3, 0, 1.5), ConfigError);
}

TEST(NetworkSpecJson, RoundTrip) {
    auto spec = toy_spec();
    spec.batch_norm = false;
    EXPECT_EQ(network_spec_from_json(to_json(spec)), spec);
    auto defaults = network_spec_from_json(nlohmann::json::object(), 16);
    EXPECT_EQ(defaults.encoder_layers, (std::vector<std::size_t>{16, 256, 128}));
    EXPECT_EQ(defaults.cluster_dim(), 64u);
    EXPECT_THROW(network_spec_from_json({{"projector", {0, 4}}}, 4), ConfigError);
}

TEST(Forward, IdenticalViewsGiveIdenticalRepresentations) {
    auto s = init_model(toy_spec(), 3, 3);
    auto x = gaussian_matrix(6, 8, 1);
    Tape tape;
    auto f = forward(s, tape, x, x);
    EXPECT_EQ(f.views[0].y.value(), f.views[1].y.value());
    EXPECT_EQ(f.views[0].z.value(), f.views[1].z.value());
    EXPECT_EQ(f.views[0].v_target, f.views[1].v_target);
}

TEST(Forward, SingleItemBatchShapes) {
    auto s = init_model(toy_spec(), 3, 3);
    auto x = gaussian_matrix(1, 8, 2);
    Tape tape;
    auto f = forward(s, tape, x, x);
    for (const auto& v : f.views) {
        EXPECT_EQ(v.y.value().shape(), (Shape{1, 8}));
        EXPECT_EQ(v.v.value().shape(), (Shape{1, 8}));
        EXPECT_EQ(v.w.value().shape(), (Shape{1, 8}));
        EXPECT_EQ(v.z.value().shape(), (Shape{1, 8}));
        EXPECT_EQ(v.y_target.shape(), (Shape{1, 8}));
        EXPECT_EQ(v.v_target.shape(), (Shape{1, 8}));
        EXPECT_TRUE(v.z.value().all_finite());
    }
}

TEST(Forward, HandBuiltLinearEncoderMatchesArithmetic) {
    NetworkSpec spec;
    spec.encoder_layers = {2, 2};
    spec.projector = {2, 2};
    spec.predictor = {2, 2};
    spec.cluster_projector = {2, 2};
    spec.batch_norm = false;
    auto s = init_model(spec, 2, 0);
    s.online_encoder.layers[0].weight.value = Tensor::matrix({{1, 2}, {3, 4}});
    s.online_encoder.layers[0].bias.value = Tensor::matrix({{0.5, -10}});
    auto& h0 = s.cluster_projector.layers[0];
    auto& h1 = s.cluster_projector.layers[1];
    h0.weight.value = Tensor::matrix({{2, -1}, {1, 1}});
    h0.bias.value = Tensor::matrix({{0, 0}});
    h1.weight.value = Tensor::matrix({{1, 0}, {1, 3}});
    h1.bias.value = Tensor::matrix({{0.25, 0}});
    Tape tape;
    auto x = Tensor::matrix({{1, 0}});
    auto f = forward(s, tape, x, x);
    // y = relu([1, 0] W + b) = relu([1.5, -8]) = [1.5, 0]
    EXPECT_EQ(f.views[0].y.value(), Tensor::matrix({{1.5, 0}}));
    // hidden = relu([3, -1.5]) = [3, 0]; z = [3, 0] W1 + b1 = [3.25, 0]
    EXPECT_EQ(f.views[0].z.value(), Tensor::matrix({{3.25, 0}}));
}

TEST(Forward, ShapeMismatchRejected) {
    auto s = init_model(toy_spec(), 3, 3);
    Tape tape;
    EXPECT_THROW(forward(s, tape, gaussian_matrix(4, 7, 1), gaussian_matrix(4, 7, 1)), DimensionError);
    EXPECT_THROW(forward(s, tape, gaussian_matrix(4, 8, 1), gaussian_matrix(3, 8, 1)), DimensionError);
}

TEST(Forward, EvalModeIsPerRowAndDeterministic) {
    auto s = init_model(toy_spec(), 3, 4);
    auto x = gaussian_matrix(10, 8, 3);
    {
        Tape t;
        forward(s, t, x, x);  // moves the running statistics away from their initial values
    }
    EXPECT_NE(s.online_encoder.layers[0].running_mean, Tensor({1, 16}));
    auto all = embed(s, x);
    auto again = embed(s, x);
    EXPECT_EQ(all.z, again.z);
    for (std::size_t i = 0; i < 10; ++i) {
        auto one = embed(s, slice_rows(x, i, i + 1));
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(one.z(0, j), all.z(i, j), 1e-12);
            EXPECT_NEAR(one.v_target(0, j), all.v_target(i, j), 1e-12);
        }
    }
}

TEST(Forward, RunningStatisticsFollowMomentum) {
    auto s = init_model(toy_spec(), 3, 4);
    auto x = gaussian_matrix(5, 8, 9);
    // Oracle: the first layer's pre-activation statistics, computed by hand.
    const auto& w = s.online_encoder.layers[0].weight.value;
    const auto& b = s.online_encoder.layers[0].bias.value;
    std::vector<double> mean(16, 0), var(16, 0);
    std::vector<std::vector<double>> h(5, std::vector<double>(16));
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            double a = b[j];
            for (std::size_t k = 0; k < 8; ++k) a += x(i, k) * w(k, j);
            h[i][j] = a;
            mean[j] += a / 5;
        }
    }
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 16; ++j) var[j] += (h[i][j] - mean[j]) * (h[i][j] - mean[j]) / 4;
    Tape t;
    forward_view(s, t, x, BnMode::train);
    const auto& layer = s.online_encoder.layers[0];
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_NEAR(layer.running_mean[j], 0.1 * mean[j], 1e-12);
        EXPECT_NEAR(layer.running_var[j], 0.9 + 0.1 * var[j], 1e-12);
    }
}

TEST(Ema, BoundaryCoefficients) {
    for (double tau : {0.0, 0.5, 0.99, 1.0}) {
        auto s = init_model(toy_spec(), 3, 6, tau);
        perturb_online(s, 1);
        std::vector<Tensor> xi0, th0;
        for (auto* p : s.target_parameters()) xi0.push_back(p->value);
        for (auto* p : s.online_parameters()) th0.push_back(p->value);
        ema_update(s);
        auto xi = s.target_parameters();
        auto th = s.mirrored_online_parameters();
        for (std::size_t i = 0; i < xi.size(); ++i) {
            for (std::size_t k = 0; k < xi[i]->value.size(); ++k) {
                const Real expect = static_cast<Real>(tau) * xi0[i][k] + (1 - static_cast<Real>(tau)) * th[i]->value[k];
                EXPECT_EQ(xi[i]->value[k], expect);
            }
            if (tau == 1.0) EXPECT_EQ(xi[i]->value, xi0[i]);
            if (tau == 0.0) EXPECT_EQ(xi[i]->value, th[i]->value);
        }
        auto all = s.online_parameters();
        for (std::size_t i = 0; i < all.size(); ++i) {
            EXPECT_EQ(all[i]->value, th0[i]) << "theta must not change";
        }
    }
}

TEST(Ema, ScalarCase) {
    auto s = init_model(toy_spec(), 3, 6, 0.99);
    s.target_encoder.layers[0].weight.value.fill(1);
    s.online_encoder.layers[0].weight.value.fill(0);
    ema_update(s);
    for (auto v : s.target_encoder.layers[0].weight.value.data()) {
        EXPECT_DOUBLE_EQ(v, 0.99);
    }
}

TEST(Ema, GeometricConvergence) {
    auto s = init_model(toy_spec(), 3, 7, 0.9);
    perturb_online(s, 2);
    const double d0 = param_distance(s);
    ASSERT_GT(d0, 1.0);
    for (int n = 1; n <= 100; ++n) {
        ema_update(s);
        EXPECT_NEAR(param_distance(s), std::pow(0.9, n) * d0, 1e-9) << "n=" << n;
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto s = init_model(toy_spec(), 3, 8, 0.97);
    perturb_online(s, 3);
    {
        Tape t;
        forward(s, t, gaussian_matrix(6, 8, 4), gaussian_matrix(6, 8, 5));
    }
    const auto a = temp_path("a.ccrl");
    const auto b = temp_path("b.ccrl");
    save_checkpoint(a, s, {{"mode", "concurl"}});
    auto loaded = load_checkpoint(a);
    save_checkpoint(b, loaded.state, loaded.extra);
    EXPECT_EQ(read_bytes(a), read_bytes(b));
    EXPECT_EQ(loaded.state.tau_b, 0.97);
    EXPECT_EQ(loaded.extra.at("mode"), "concurl");
    EXPECT_EQ(loaded.state.prototypes.value, s.prototypes.value);
    EXPECT_EQ(loaded.state.target_encoder.layers[1].running_var, s.target_encoder.layers[1].running_var);
    auto x = gaussian_matrix(4, 8, 6);
    EXPECT_EQ(embed(loaded.state, x).z, embed(s, x).z);
    fs::remove(a);
    fs::remove(b);
}

TEST(Checkpoint, CorruptFilesRejected) {
    auto s = init_model(toy_spec(), 3, 8);
    const auto a = temp_path("c.ccrl");
    save_checkpoint(a, s);
    const auto size = fs::file_size(a);
    fs::resize_file(a, size - 5);
    EXPECT_THROW(load_checkpoint(a), FormatError);
    {
        std::ofstream out(a, std::ios::binary);
        out << "NOPE and more bytes";
    }
    EXPECT_THROW(load_checkpoint(a), FormatError);
    EXPECT_THROW(load_checkpoint(temp_path("missing.ccrl")), DataError);
    fs::remove(a);
}
