#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "concurl/datasets.hpp"
#include "concurl/error.hpp"
#include "concurl/random.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

// Stochastic view generation. Images run crop-resize, flip, color jitter,
// blur, clamp and normalize; vectors run additive noise, feature dropout and
// per-feature scaling.
struct AugmentPolicy {
    std::pair<double, double> crop_scale_range{0.08, 1.0};
    std::pair<double, double> crop_ratio_range{3.0 / 4.0, 4.0 / 3.0};
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    // Brightness, contrast and per-channel factors drawn from [1 - s, 1 + s].
    double jitter_strength = 0.4;
    // Vector items: per-feature scales log-uniform in [1/(1+s), 1+s].
    double feature_scale_strength = 0.25;
    std::pair<double, double> blur_sigma_range{0.1, 2.0};
    double blur_prob_view1 = 1.0;
    double blur_prob_view2 = 0.5;
    double noise_sigma = 0.0;
    double feature_dropout_prob = 0.0;
    std::uint64_t seed = 0;
    bool bilinear = false;
    // Per-channel normalization applied last on images; empty disables it.
    std::vector<double> channel_mean;
    std::vector<double> channel_std;

    // Every stage disabled: views equal the input.
    static AugmentPolicy identity() {
        AugmentPolicy p;
        p.crop_scale_range = {1.0, 1.0};
        p.flip_prob = 0;
        p.jitter_prob = 0;
        p.blur_prob_view1 = 0;
        p.blur_prob_view2 = 0;
        p.noise_sigma = 0;
        p.feature_dropout_prob = 0;
        return p;
    }

    void validate() const {
        auto prob = [](double p, const char* name) {
            if (!(p >= 0 && p <= 1)) {
                throw ConfigError(std::string("augment policy: ") + name + " must lie in [0, 1]");
            }
        };
        prob(flip_prob, "flip_prob");
        prob(jitter_prob, "jitter_prob");
        prob(blur_prob_view1, "blur_prob_view1");
        prob(blur_prob_view2, "blur_prob_view2");
        prob(feature_dropout_prob, "feature_dropout_prob");
        const auto [lo, hi] = crop_scale_range;
        if (!(lo > 0 && lo <= hi && hi <= 1)) {
            throw ConfigError("augment policy: crop_scale_range must satisfy 0 < lo <= hi <= 1");
        }
        if (!(crop_ratio_range.first > 0 && crop_ratio_range.first <= crop_ratio_range.second)) {
            throw ConfigError("augment policy: crop_ratio_range must be positive and ordered");
        }
        if (!(blur_sigma_range.first > 0 && blur_sigma_range.first <= blur_sigma_range.second)) {
            throw ConfigError("augment policy: blur_sigma_range must be positive and ordered");
        }
        if (noise_sigma < 0 || jitter_strength < 0 || feature_scale_strength < 0) {
            throw ConfigError(
                "augment policy: noise_sigma, jitter_strength and feature_scale_strength must be non-negative");
        }
        if (jitter_strength >= 1 && jitter_prob > 0) {
            throw ConfigError("augment policy: jitter_strength must be below 1");
        }
        if (channel_mean.size() != channel_std.size()) {
            throw ConfigError("augment policy: channel_mean and channel_std differ in length");
        }
        for (double s : channel_std) {
            if (!(s > 0)) {
                throw ConfigError("augment policy: channel_std entries must be positive");
            }
        }
    }
};

inline nlohmann::json to_json(const AugmentPolicy& p) {
    return {{"crop_scale_range", {p.crop_scale_range.first, p.crop_scale_range.second}},
            {"crop_ratio_range", {p.crop_ratio_range.first, p.crop_ratio_range.second}},
            {"flip_prob", p.flip_prob},
            {"jitter_prob", p.jitter_prob},
            {"jitter_strength", p.jitter_strength},
            {"feature_scale_strength", p.feature_scale_strength},
            {"blur_sigma_range", {p.blur_sigma_range.first, p.blur_sigma_range.second}},
            {"blur_prob_view1", p.blur_prob_view1},
            {"blur_prob_view2", p.blur_prob_view2},
            {"noise_sigma", p.noise_sigma},
            {"feature_dropout_prob", p.feature_dropout_prob},
            {"seed", p.seed},
            {"bilinear", p.bilinear},
            {"channel_mean", p.channel_mean},
            {"channel_std", p.channel_std}};
}

inline AugmentPolicy augment_policy_from_json(const nlohmann::json& j, AugmentPolicy p = {}) {
    auto range = [&](const char* key, std::pair<double, double>& out) {
        if (j.contains(key)) {
            const auto& a = j.at(key);
            out = {a.at(0).get<double>(), a.at(1).get<double>()};
        }
    };
    range("crop_scale_range", p.crop_scale_range);
    range("crop_ratio_range", p.crop_ratio_range);
    range("blur_sigma_range", p.blur_sigma_range);
    p.flip_prob = j.value("flip_prob", p.flip_prob);
    p.jitter_prob = j.value("jitter_prob", p.jitter_prob);
    p.jitter_strength = j.value("jitter_strength", p.jitter_strength);
    p.feature_scale_strength = j.value("feature_scale_strength", p.feature_scale_strength);
    p.blur_prob_view1 = j.value("blur_prob_view1", p.blur_prob_view1);
    p.blur_prob_view2 = j.value("blur_prob_view2", p.blur_prob_view2);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.feature_dropout_prob = j.value("feature_dropout_prob", p.feature_dropout_prob);
    p.seed = j.value("seed", p.seed);
    p.bilinear = j.value("bilinear", p.bilinear);
    p.channel_mean = j.value("channel_mean", p.channel_mean);
    p.channel_std = j.value("channel_std", p.channel_std);
    return p;
}

// Random draws behind one augmented item, enough to replay it.
struct ItemDraws {
    std::uint64_t stream_seed = 0;
    // Image path.
    std::size_t crop_top = 0, crop_left = 0, crop_height = 0, crop_width = 0;
    bool flipped = false;
    bool jittered = false;
    double brightness = 1, contrast = 1;
    std::vector<double> channel_scale;
    double blur_sigma = 0;  // 0 = not blurred
    // Vector path.
    std::size_t dropped_features = 0;
    bool scaled = false;
};

struct ViewPair {
    Tensor view1;
    Tensor view2;
    std::vector<ItemDraws> provenance1;
    std::vector<ItemDraws> provenance2;
};

// ---------------------------------------------------------------------------
// Image primitives on h x w x c tensors

inline std::size_t blur_kernel_size(std::size_t h, std::size_t w) {
    std::size_t k = std::min<std::size_t>(h, w) / 2;
    if (k % 2 == 0) {
        k = k == 0 ? 1 : k - 1;
    }
    return std::min<std::size_t>(23, std::max<std::size_t>(k, 1));
}

inline std::vector<double> gaussian_kernel(double sigma, std::size_t kernel_size) {
    const auto r = static_cast<std::ptrdiff_t>(kernel_size / 2);
    std::vector<double> k(kernel_size);
    double total = 0;
    for (std::ptrdiff_t i = -r; i <= r; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2 * sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = v;
        total += v;
    }
    for (auto& v : k) {
        v /= total;
    }
    return k;
}

namespace detail {

// Half-sample symmetric reflection: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) ...
// With it each input sample receives total weight 1, so the blur keeps the mean.
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto sn = static_cast<std::ptrdiff_t>(n);
    if (i < 0) {
        i = -i - 1;
    }
    if (i >= sn) {
        i = 2 * sn - i - 1;
    }
    return static_cast<std::size_t>(i);
}

inline void require_image(const Tensor& img) {
    if (img.rank() != 3) {
        throw DimensionError("expected an h x w x c image, got " + shape_string(img.shape()));
    }
}

}  // namespace detail

// Separable Gaussian blur with symmetric edge reflection.
inline Tensor gaussian_blur(const Tensor& img, double sigma, std::size_t kernel_size) {
    detail::require_image(img);
    if (kernel_size % 2 == 0) {
        throw DimensionError("gaussian_blur: kernel size must be odd, got " + std::to_string(kernel_size));
    }
    if (!(sigma > 0)) {
        throw ConfigError("gaussian_blur: sigma must be positive");
    }
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    const std::size_t r = kernel_size / 2;
    if (r > std::min(h, w)) {
        throw DimensionError("gaussian_blur: kernel of size " + std::to_string(kernel_size) + " too large for " +
                             shape_string(img.shape()));
    }
    const auto k = gaussian_kernel(sigma, kernel_size);
    const auto sr = static_cast<std::ptrdiff_t>(r);
    auto at = [&](const Tensor& t, std::size_t y, std::size_t x, std::size_t ch) { return t[(y * w + x) * c + ch]; };
    Tensor tmp(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (std::ptrdiff_t d = -sr; d <= sr; ++d) {
                    const auto xx = detail::reflect(static_cast<std::ptrdiff_t>(x) + d, w);
                    acc += k[static_cast<std::size_t>(d + sr)] * at(img, y, xx, ch);
                }
                tmp[(y * w + x) * c + ch] = static_cast<Real>(acc);
            }
        }
    }
    Tensor out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (std::ptrdiff_t d = -sr; d <= sr; ++d) {
                    const auto yy = detail::reflect(static_cast<std::ptrdiff_t>(y) + d, h);
                    acc += k[static_cast<std::size_t>(d + sr)] * at(tmp, yy, x, ch);
                }
                out[(y * w + x) * c + ch] = static_cast<Real>(acc);
            }
        }
    }
    return out;
}

inline Tensor flip_horizontal(const Tensor& img) {
    detail::require_image(img);
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    Tensor out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[(y * w + x) * c + ch] = img[(y * w + (w - 1 - x)) * c + ch];
            }
        }
    }
    return out;
}

// Crops [top, top+ch) x [left, left+cw) and resizes back to the input size.
// Nearest neighbour maps output pixel y to source row top + floor(y * ch / h).
inline Tensor crop_resize(const Tensor& img, std::size_t top, std::size_t left, std::size_t crop_h,
                          std::size_t crop_w, bool bilinear = false) {
    detail::require_image(img);
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (crop_h == 0 || crop_w == 0 || top + crop_h > h || left + crop_w > w) {
        throw DimensionError("crop box outside image");
    }
    Tensor out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                Real v;
                if (!bilinear) {
                    const std::size_t sy = top + y * crop_h / h;
                    const std::size_t sx = left + x * crop_w / w;
                    v = img[(sy * w + sx) * c + ch];
                } else {
                    // Pixel-centre aligned sampling inside the crop.
                    const double fy = std::clamp((y + 0.5) * crop_h / h - 0.5, 0.0, double(crop_h - 1));
                    const double fx = std::clamp((x + 0.5) * crop_w / w - 0.5, 0.0, double(crop_w - 1));
                    const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
                    const std::size_t y1 = std::min(y0 + 1, crop_h - 1), x1 = std::min(x0 + 1, crop_w - 1);
                    const double ay = fy - y0, ax = fx - x0;
                    auto px = [&](std::size_t yy, std::size_t xx) {
                        return static_cast<double>(img[((top + yy) * w + left + xx) * c + ch]);
                    };
                    v = static_cast<Real>((1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x1)) +
                                          ay * ((1 - ax) * px(y1, x0) + ax * px(y1, x1)));
                }
                out[(y * w + x) * c + ch] = v;
            }
        }
    }
    return out;
}

// Per-channel mean and standard deviation over a whole image dataset.
inline std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& ds) {
    if (ds.kind != DataKind::image) {
        throw DataError("channel statistics need image data");
    }
    const std::size_t c = ds.image.channels;
    std::vector<double> sum(c, 0), sq(c, 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto row = ds.features.row(i);
        for (std::size_t p = 0; p < row.size(); ++p) {
            sum[p % c] += row[p];
            sq[p % c] += row[p] * row[p];
        }
        count += row.size() / c;
    }
    std::vector<double> mean(c), stdev(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] = sum[ch] / static_cast<double>(count);
        stdev[ch] = std::sqrt(std::max(sq[ch] / static_cast<double>(count) - mean[ch] * mean[ch], 0.0));
        if (stdev[ch] <= 0) {
            stdev[ch] = 1;
        }
    }
    return {mean, stdev};
}

// ---------------------------------------------------------------------------
// Per-item pipelines

namespace detail {

inline Tensor augment_image(const Tensor& img, const AugmentPolicy& policy, int view, Rng& rng, ItemDraws& draws) {
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    Tensor out = img;
    bool changed = false;

    // Random resized crop.
    const double area = static_cast<double>(h * w);
    std::size_t ch = h, cw = w, top = 0, left = 0;
    const double scale = uniform(rng, policy.crop_scale_range.first,
                                 std::nextafter(policy.crop_scale_range.second, 2.0));
    // A full-area draw keeps the whole image whatever its aspect ratio.
    for (int attempt = 0; attempt < 10 && scale < 1.0; ++attempt) {
        const double log_ratio = uniform(rng, std::log(policy.crop_ratio_range.first),
                                         std::nextafter(std::log(policy.crop_ratio_range.second), 10.0));
        const double ratio = std::exp(log_ratio);
        const auto th = static_cast<std::size_t>(std::lround(std::sqrt(area * scale / ratio)));
        const auto tw = static_cast<std::size_t>(std::lround(std::sqrt(area * scale * ratio)));
        if (th >= 1 && tw >= 1 && th <= h && tw <= w) {
            ch = th;
            cw = tw;
            top = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
            left = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
            break;
        }
    }
    draws.crop_top = top;
    draws.crop_left = left;
    draws.crop_height = ch;
    draws.crop_width = cw;
    if (ch != h || cw != w) {
        out = crop_resize(out, top, left, ch, cw, policy.bilinear);
        changed = true;
    }

    if (bernoulli(rng, policy.flip_prob)) {
        out = flip_horizontal(out);
        draws.flipped = true;
    }

    if (bernoulli(rng, policy.jitter_prob)) {
        const double s = policy.jitter_strength;
        draws.jittered = true;
        draws.brightness = uniform(rng, 1 - s, 1 + s);
        draws.contrast = uniform(rng, 1 - s, 1 + s);
        draws.channel_scale.resize(c);
        for (auto& f : draws.channel_scale) {
            f = uniform(rng, 1 - s, 1 + s);
        }
        double mean = 0;
        for (auto v : out.data()) {
            mean += v;
        }
        mean = mean * draws.brightness / static_cast<double>(out.size());
        for (std::size_t p = 0; p < out.size(); ++p) {
            double v = out[p] * draws.brightness;
            v = (v - mean) * draws.contrast + mean;
            v *= draws.channel_scale[p % c];
            out[p] = static_cast<Real>(v);
        }
        changed = true;
    }

    const double blur_prob = view == 1 ? policy.blur_prob_view1 : policy.blur_prob_view2;
    if (bernoulli(rng, blur_prob)) {
        draws.blur_sigma = uniform(rng, policy.blur_sigma_range.first, policy.blur_sigma_range.second);
        out = gaussian_blur(out, draws.blur_sigma, blur_kernel_size(h, w));
        changed = true;
    }

    if (changed) {
        for (auto& v : out.data()) {
            v = std::clamp(v, Real(0), Real(1));
        }
    }
    if (!policy.channel_mean.empty()) {
        if (policy.channel_mean.size() != c) {
            throw ConfigError("augment policy normalization has " + std::to_string(policy.channel_mean.size()) +
                              " channels, image has " + std::to_string(c));
        }
        for (std::size_t p = 0; p < out.size(); ++p) {
            out[p] = static_cast<Real>((out[p] - policy.channel_mean[p % c]) / policy.channel_std[p % c]);
        }
    }
    return out;
}

inline void augment_vector(std::span<Real> x, const AugmentPolicy& policy, Rng& rng, ItemDraws& draws) {
    if (policy.noise_sigma > 0) {
        for (auto& v : x) {
            v += static_cast<Real>(normal(rng, 0.0, policy.noise_sigma));
        }
    }
    if (policy.feature_dropout_prob > 0) {
        for (auto& v : x) {
            if (bernoulli(rng, policy.feature_dropout_prob)) {
                v = 0;
                ++draws.dropped_features;
            }
        }
    }
    if (bernoulli(rng, policy.jitter_prob)) {
        draws.scaled = true;
        const double hi = std::log1p(policy.feature_scale_strength);
        for (auto& v : x) {
            v = static_cast<Real>(v * std::exp(uniform(rng, -hi, std::nextafter(hi, 10.0))));
        }
    }
}

}  // namespace detail

// Augments one item (a row of the batch) for view 1 or 2. The result depends
// only on (item, policy, stream, index, view).
inline Tensor augment_item(std::span<const Real> item, const AugmentPolicy& policy,
                           const std::optional<ImageGeometry>& geometry, std::uint64_t stream, std::size_t index,
                           int view, ItemDraws* draws_out = nullptr) {
    ItemDraws draws;
    auto rng = make_rng(policy.seed, {stream, index, static_cast<std::uint64_t>(view)});
    draws.stream_seed = rng();
    Tensor out;
    if (geometry) {
        if (geometry->size() != item.size()) {
            throw DimensionError("item length does not match image geometry");
        }
        Tensor img({geometry->height, geometry->width, geometry->channels},
                   std::vector<Real>(item.begin(), item.end()));
        out = detail::augment_image(img, policy, view, rng, draws);
    } else {
        out = Tensor({item.size()}, std::vector<Real>(item.begin(), item.end()));
        detail::augment_vector(out.data(), policy, rng, draws);
    }
    if (draws_out) {
        *draws_out = std::move(draws);
    }
    return out;
}

// Two independently augmented copies of a B x D batch. `stream` separates
// calls (e.g. the global step) so every batch gets fresh draws.
inline ViewPair make_views(const Tensor& batch, const AugmentPolicy& policy,
                           const std::optional<ImageGeometry>& geometry = std::nullopt, std::uint64_t stream = 0) {
    policy.validate();
    if (batch.empty()) {
        throw DataError("make_views on an empty batch");
    }
    const std::size_t b = batch.rows();
    ViewPair pair{Tensor({b, batch.cols()}), Tensor({b, batch.cols()}), {}, {}};
    pair.provenance1.resize(b);
    pair.provenance2.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        auto v1 = augment_item(batch.row(i), policy, geometry, stream, i, 1, &pair.provenance1[i]);
        auto v2 = augment_item(batch.row(i), policy, geometry, stream, i, 2, &pair.provenance2[i]);
        std::copy(v1.data().begin(), v1.data().end(), pair.view1.row(i).begin());
        std::copy(v2.data().begin(), v2.data().end(), pair.view2.row(i).begin());
    }
    if (!pair.view1.all_finite() || !pair.view2.all_finite()) {
        throw NumericError("augmentation produced non-finite values");
    }
    return pair;
}

}  // namespace concurl
