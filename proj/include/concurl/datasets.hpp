#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"
#include "concurl/random.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

enum class DataKind { vector, image };

struct ImageGeometry {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    std::size_t size() const { return height * width * channels; }
    friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

// Labeled feature matrix. Features are stored one item per row; images are
// flattened in (h, w, c) order. Labels are used only for evaluation.
struct Dataset {
    Tensor features;
    std::vector<int> labels;
    int num_classes = 0;
    DataKind kind = DataKind::vector;
    ImageGeometry image;
    // Original label spelling for each remapped id.
    std::vector<std::string> label_names;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.cols(); }

    Tensor item(std::size_t i) const {
        std::vector<Real> row(features.row(i).begin(), features.row(i).end());
        if (kind == DataKind::image) {
            return Tensor({image.height, image.width, image.channels}, std::move(row));
        }
        return Tensor({row.size()}, std::move(row));
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
        for (int y : labels) {
            ++counts[static_cast<std::size_t>(y)];
        }
        return counts;
    }

    // True when class sizes differ by at most one.
    bool is_balanced() const {
        auto counts = class_counts();
        if (counts.empty()) {
            return true;
        }
        auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        return *hi - *lo <= 1;
    }

    void validate() const {
        if (labels.empty()) {
            throw DataError("dataset is empty");
        }
        if (features.rows() != labels.size()) {
            throw DataError("feature rows and label count differ");
        }
        if (num_classes < 1) {
            throw DataError("dataset must have at least one class");
        }
        for (int y : labels) {
            if (y < 0 || y >= num_classes) {
                throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
        if (kind == DataKind::image && image.size() != features.cols()) {
            throw DataError("image geometry does not match feature width");
        }
    }
};

// ---------------------------------------------------------------------------
// Synthetic blobs

struct BlobSpec {
    int num_clusters = 4;
    int dim = 16;
    int points_per_cluster = 128;
    double center_scale = 5.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
    // Centers are redrawn until every pair is at least this many sigmas apart.
    double min_separation_sigmas = 4.0;
};

inline double min_center_distance(const Tensor& centers) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < centers.rows(); ++a) {
        for (std::size_t b = a + 1; b < centers.rows(); ++b) {
            double d2 = 0;
            for (std::size_t j = 0; j < centers.cols(); ++j) {
                const double d = centers(a, j) - centers(b, j);
                d2 += d * d;
            }
            best = std::min(best, std::sqrt(d2));
        }
    }
    return best;
}

inline Tensor blob_centers(const BlobSpec& spec) {
    auto rng = make_rng(spec.seed, {0xb10b});
    const auto k = static_cast<std::size_t>(spec.num_clusters);
    const auto d = static_cast<std::size_t>(spec.dim);
    const double required = spec.min_separation_sigmas * spec.noise_sigma;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Tensor centers({k, d});
        for (auto& v : centers.data()) {
            v = uniform(rng, -spec.center_scale, spec.center_scale);
        }
        if (k < 2 || min_center_distance(centers) >= required) {
            return centers;
        }
    }
    throw DataError("could not place blob centers " + std::to_string(required) + " apart; raise center_scale");
}

inline Dataset generate_blobs(const BlobSpec& spec) {
    if (spec.num_clusters < 1 || spec.dim < 1 || spec.points_per_cluster < 1) {
        throw DataError("blob counts must be at least 1");
    }
    if (spec.noise_sigma < 0) {
        throw DataError("noise_sigma must be non-negative");
    }
    const Tensor centers = blob_centers(spec);
    const auto k = static_cast<std::size_t>(spec.num_clusters);
    const auto d = static_cast<std::size_t>(spec.dim);
    const auto per = static_cast<std::size_t>(spec.points_per_cluster);
    auto rng = make_rng(spec.seed, {0x901e});

    Dataset ds;
    ds.features = Tensor({k * per, d});
    ds.labels.reserve(k * per);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < per; ++p) {
            const std::size_t row = c * per + p;
            for (std::size_t j = 0; j < d; ++j) {
                const double noise = spec.noise_sigma > 0 ? normal(rng, 0.0, spec.noise_sigma) : 0.0;
                ds.features(row, j) = static_cast<Real>(centers(c, j) + noise);
            }
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    ds.num_classes = spec.num_clusters;
    ds.kind = DataKind::vector;
    for (std::size_t c = 0; c < k; ++c) {
        ds.label_names.push_back(std::to_string(c));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Label remapping

namespace detail {

inline std::optional<double> parse_number(const std::string& cell) {
    if (cell.empty()) {
        return std::nullopt;
    }
    std::size_t used = 0;
    try {
        double v = std::stod(cell, &used);
        if (used != cell.size()) {
            return std::nullopt;
        }
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// Sorted-unique bijection onto [0, K); numeric spellings sort numerically.
inline std::vector<int> remap_labels(const std::vector<std::string>& raw, std::vector<std::string>& names) {
    std::vector<std::string> uniq(raw.begin(), raw.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    const bool numeric = std::all_of(uniq.begin(), uniq.end(), [](const auto& s) { return parse_number(s).has_value(); });
    if (numeric) {
        std::stable_sort(uniq.begin(), uniq.end(),
                         [](const auto& a, const auto& b) { return *parse_number(a) < *parse_number(b); });
    }
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        index[uniq[i]] = static_cast<int>(i);
    }
    std::vector<int> out;
    out.reserve(raw.size());
    for (const auto& s : raw) {
        out.push_back(index.at(s));
    }
    names = std::move(uniq);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

// Splits one CSV record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV

// Reads a rectangular numeric table; every column except `label_column` is a
// feature. A negative label_column counts from the end (-1 is the last).
inline Dataset load_csv(const std::filesystem::path& path, int label_column, bool header = false) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open CSV file " + path.string());
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) {
            continue;
        }
        rows.push_back(detail::split_csv_line(line));
    }
    if (header && !rows.empty()) {
        rows.erase(rows.begin());
    }
    if (rows.empty()) {
        throw FormatError("CSV file " + path.string() + " has no data rows");
    }
    const std::size_t width = rows.front().size();
    const int col = label_column < 0 ? static_cast<int>(width) + label_column : label_column;
    if (col < 0 || static_cast<std::size_t>(col) >= width) {
        throw FormatError("label column " + std::to_string(label_column) + " missing from " +
                          std::to_string(width) + "-column CSV");
    }
    if (width < 2) {
        throw FormatError("CSV needs at least one feature column besides the label");
    }
    const std::size_t n = rows.size();
    Tensor features({n, width - 1});
    std::vector<std::string> raw_labels;
    raw_labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (rows[r].size() != width) {
            throw FormatError("ragged CSV: row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                              " cells, expected " + std::to_string(width));
        }
        std::size_t f = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (static_cast<int>(c) == col) {
                raw_labels.push_back(rows[r][c]);
                continue;
            }
            auto v = detail::parse_number(rows[r][c]);
            if (!v) {
                throw FormatError("non-numeric cell '" + rows[r][c] + "' at row " + std::to_string(r + 1) +
                                  ", column " + std::to_string(c + 1));
            }
            features(r, f++) = static_cast<Real>(*v);
        }
    }
    Dataset ds;
    ds.features = std::move(features);
    ds.labels = detail::remap_labels(raw_labels, ds.label_names);
    ds.num_classes = static_cast<int>(ds.label_names.size());
    ds.kind = DataKind::vector;
    return ds;
}

// Writes features followed by the label id as the last column, with enough
// digits to round-trip every value exactly.
inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write CSV file " + path.string());
    }
    out << std::setprecision(std::numeric_limits<Real>::max_digits10);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (auto v : ds.features.row(r)) {
            out << v << ',';
        }
        out << ds.labels[r] << '\n';
    }
}

// ---------------------------------------------------------------------------
// IDX (MNIST container)

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) {
        throw FormatError("truncated IDX header in " + what);
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
}

}  // namespace detail

// Grayscale IDX images (magic 0x803) with labels (magic 0x801); pixels are
// scaled to [0, 1].
inline Dataset load_idx_images(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                               std::optional<std::size_t> limit = std::nullopt) {
    const auto img = detail::read_bytes(images_path);
    const auto lab = detail::read_bytes(labels_path);
    const auto img_name = images_path.string();
    const auto lab_name = labels_path.string();
    if (detail::read_be32(img, 0, img_name) != kIdxImageMagic) {
        throw FormatError("bad IDX image magic in " + img_name);
    }
    if (detail::read_be32(lab, 0, lab_name) != kIdxLabelMagic) {
        throw FormatError("bad IDX label magic in " + lab_name);
    }
    const std::size_t count = detail::read_be32(img, 4, img_name);
    const std::size_t h = detail::read_be32(img, 8, img_name);
    const std::size_t w = detail::read_be32(img, 12, img_name);
    const std::size_t label_count = detail::read_be32(lab, 4, lab_name);
    if (count != label_count) {
        throw FormatError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                          std::to_string(label_count) + " labels");
    }
    if (h == 0 || w == 0) {
        throw FormatError("IDX images must have positive dimensions");
    }
    if (img.size() < 16 + count * h * w) {
        throw FormatError("truncated IDX image payload in " + img_name);
    }
    if (lab.size() < 8 + count) {
        throw FormatError("truncated IDX label payload in " + lab_name);
    }
    const std::size_t n = limit ? std::min(count, *limit) : count;
    if (n == 0) {
        throw DataError("IDX selection is empty");
    }
    Dataset ds;
    ds.features = Tensor({n, h * w});
    std::vector<std::string> raw;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < h * w; ++p) {
            ds.features(i, p) = static_cast<Real>(img[16 + i * h * w + p]) / Real(255);
        }
        raw.push_back(std::to_string(static_cast<int>(lab[8 + i])));
    }
    ds.labels = detail::remap_labels(raw, ds.label_names);
    ds.num_classes = static_cast<int>(ds.label_names.size());
    ds.kind = DataKind::image;
    ds.image = {h, w, 1};
    return ds;
}

// Writes a single-channel image dataset as an IDX pair; pixels are rounded to bytes.
inline void save_idx_images(const Dataset& ds, const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path) {
    if (ds.kind != DataKind::image || ds.image.channels != 1) {
        throw DataError("IDX export requires single-channel image data");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) {
        throw DataError("cannot write IDX files");
    }
    detail::write_be32(img, kIdxImageMagic);
    detail::write_be32(img, static_cast<std::uint32_t>(ds.size()));
    detail::write_be32(img, static_cast<std::uint32_t>(ds.image.height));
    detail::write_be32(img, static_cast<std::uint32_t>(ds.image.width));
    for (auto v : ds.features.data()) {
        const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
    detail::write_be32(lab, kIdxLabelMagic);
    detail::write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) {
        lab.put(static_cast<char>(static_cast<unsigned char>(y)));
    }
}

// ---------------------------------------------------------------------------
// Manifest

// {"kind": "blobs"|"csv"|"idx", "K": int, "paths": {...}, "seed": int, ...}
inline Dataset load_dataset(const nlohmann::json& manifest, const std::filesystem::path& base_dir = {}) {
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    const std::string kind = manifest.value("kind", "");
    Dataset ds;
    try {
        if (kind == "blobs") {
            BlobSpec spec;
            spec.num_clusters = manifest.value("K", spec.num_clusters);
            spec.dim = manifest.value("dim", spec.dim);
            spec.points_per_cluster = manifest.value("points_per_cluster", spec.points_per_cluster);
            spec.center_scale = manifest.value("center_scale", spec.center_scale);
            spec.noise_sigma = manifest.value("noise_sigma", spec.noise_sigma);
            spec.seed = manifest.value("seed", spec.seed);
            ds = generate_blobs(spec);
        } else if (kind == "csv") {
            const auto& paths = manifest.at("paths");
            ds = load_csv(resolve(paths.at("csv").get<std::string>()), manifest.value("label_column", -1),
                          manifest.value("header", false));
        } else if (kind == "idx") {
            const auto& paths = manifest.at("paths");
            std::optional<std::size_t> limit;
            if (manifest.contains("limit")) {
                limit = manifest.at("limit").get<std::size_t>();
            }
            ds = load_idx_images(resolve(paths.at("images").get<std::string>()),
                                 resolve(paths.at("labels").get<std::string>()), limit);
        } else {
            throw ConfigError("unknown dataset kind '" + kind + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset manifest: ") + e.what());
    }
    if (manifest.contains("K") && manifest.at("K").get<int>() != ds.num_classes) {
        throw DataError("manifest K=" + std::to_string(manifest.at("K").get<int>()) + " but data has " +
                        std::to_string(ds.num_classes) + " classes");
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Batching

class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool shuffle = true)
        : n_(dataset_size), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
        if (batch_size_ == 0) {
            throw ConfigError("batch size must be positive");
        }
    }

    std::size_t batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

    // A permutation of [0, N) split into ceil(N/B) batches; the last may be short.
    std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const {
        std::vector<std::size_t> order(n_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (shuffle_) {
            auto rng = make_rng(seed_, {0x5a3b1e, epoch_index});
            std::shuffle(order.begin(), order.end(), rng);
        }
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t start = 0; start < n_; start += batch_size_) {
            const std::size_t end = std::min(n_, start + batch_size_);
            batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
        }
        return batches;
    }

private:
    std::size_t n_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    bool shuffle_;
};

}  // namespace concurl
