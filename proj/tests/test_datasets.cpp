#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "concurl/datasets.hpp"
#include "concurl/kmeans.hpp"
#include "concurl/metrics.hpp"

using namespace concurl;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() /
                ("concurl_ds_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
}

// Writes an IDX pair of `count` 3x2 images with pixel value (i * 7 + p) % 256.
void write_idx(const fs::path& images, const fs::path& labels, std::uint32_t count, std::uint32_t label_count,
               std::uint32_t image_magic = kIdxImageMagic) {
    std::ofstream img(images, std::ios::binary);
    write_be32(img, image_magic);
    write_be32(img, count);
    write_be32(img, 3);
    write_be32(img, 2);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t p = 0; p < 6; ++p) {
            img.put(static_cast<char>((i * 7 + p * 40) % 256));
        }
    }
    std::ofstream lab(labels, std::ios::binary);
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, label_count);
    for (std::uint32_t i = 0; i < label_count; ++i) {
        lab.put(static_cast<char>(i % 3));
    }
}

}  // namespace

TEST(Blobs, ZeroNoisePointsSitOnCentersAndKMeansIsPerfect) {
    BlobSpec spec;
    spec.num_clusters = 3;
    spec.dim = 4;
    spec.points_per_cluster = 10;
    spec.noise_sigma = 0;
    spec.seed = 9;
    auto ds = generate_blobs(spec);
    auto centers = blob_centers(spec);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(ds.features(i, j), centers(static_cast<std::size_t>(ds.labels[i]), j));
        }
    }
    auto pred = kmeans(ds.features, 3, 10, 1);
    EXPECT_EQ(cluster_accuracy(pred, ds.labels).acc, 1.0);
    EXPECT_TRUE(ds.is_balanced());
}

TEST(Blobs, Deterministic) {
    BlobSpec spec;
    spec.seed = 1234;
    auto a = generate_blobs(spec);
    auto b = generate_blobs(spec);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
}

TEST(Blobs, CentersSeparatedByFourSigma) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        BlobSpec spec;
        spec.num_clusters = 4;
        spec.dim = 16;
        spec.noise_sigma = 0.5;
        spec.center_scale = 5;
        spec.seed = seed;
        EXPECT_GE(min_center_distance(blob_centers(spec)), 4 * 0.5);
    }
}

TEST(Blobs, NegativeSigmaRejected) {
    BlobSpec spec;
    spec.noise_sigma = -1;
    EXPECT_THROW(generate_blobs(spec), DataError);
}

TEST(Csv, LabelsRemapped) {
    TempDir dir;
    write_text(dir / "two.csv", "1,2,a\n3,4,b\n");
    auto ds = load_csv(dir / "two.csv", 2);
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.num_classes, 2);
    EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
    EXPECT_EQ(ds.features(1, 0), 3.0);
    EXPECT_EQ(ds.feature_dim(), 2u);
}

TEST(Csv, NumericLabelsSortNumerically) {
    TempDir dir;
    write_text(dir / "n.csv", "10,1\n2,1\n10,2\n");
    auto ds = load_csv(dir / "n.csv", 0);
    EXPECT_EQ(ds.labels, (std::vector<int>{1, 0, 1}));
    EXPECT_EQ(ds.label_names, (std::vector<std::string>{"2", "10"}));
}

TEST(Csv, FormatErrors) {
    TempDir dir;
    write_text(dir / "empty.csv", "");
    EXPECT_THROW(load_csv(dir / "empty.csv", 0), FormatError);
    write_text(dir / "ragged.csv", "1,2,a\n3,b\n");
    EXPECT_THROW(load_csv(dir / "ragged.csv", 2), FormatError);
    write_text(dir / "text.csv", "1,x,a\n3,4,b\n");
    EXPECT_THROW(load_csv(dir / "text.csv", 2), FormatError);
    write_text(dir / "ok.csv", "1,2,a\n");
    EXPECT_THROW(load_csv(dir / "ok.csv", 5), FormatError);
}

TEST(Csv, SaveLoadRoundTripIsBitExact) {
    TempDir dir;
    BlobSpec spec;
    spec.num_clusters = 3;
    spec.dim = 5;
    spec.points_per_cluster = 50;
    spec.seed = 77;
    auto ds = generate_blobs(spec);
    save_csv(ds, dir / "blobs.csv");
    auto back = load_csv(dir / "blobs.csv", -1);
    EXPECT_EQ(back.size(), 150u);
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
}

TEST(Idx, LimitAndScaling) {
    TempDir dir;
    write_idx(dir / "img", dir / "lab", 10, 10);
    auto ds = load_idx_images(dir / "img", dir / "lab", 4);
    EXPECT_EQ(ds.size(), 4u);
    EXPECT_EQ(ds.kind, DataKind::image);
    EXPECT_EQ(ds.image, (ImageGeometry{3, 2, 1}));
    for (auto v : ds.features.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(ds.item(0).shape(), (Shape{3, 2, 1}));
}

TEST(Idx, FirstImageSumMatchesByteReader) {
    TempDir dir;
    write_idx(dir / "img", dir / "lab", 5, 5);
    // Independent reader: skip the 16-byte header and sum the first 6 bytes.
    std::ifstream raw(dir / "img", std::ios::binary);
    raw.seekg(16);
    double expect = 0;
    for (int p = 0; p < 6; ++p) {
        expect += static_cast<unsigned char>(raw.get()) / 255.0;
    }
    auto ds = load_idx_images(dir / "img", dir / "lab");
    double got = 0;
    for (auto v : ds.features.row(0)) {
        got += v;
    }
    EXPECT_NEAR(got, expect, 1e-12);
}

TEST(Idx, FormatErrors) {
    TempDir dir;
    write_idx(dir / "bad", dir / "lab", 4, 4, 0x00000804);
    EXPECT_THROW(load_idx_images(dir / "bad", dir / "lab"), FormatError);
    write_idx(dir / "img", dir / "lab2", 4, 3);
    EXPECT_THROW(load_idx_images(dir / "img", dir / "lab2"), FormatError);
    write_idx(dir / "img3", dir / "lab3", 4, 4);
    fs::resize_file(dir / "img3", 16 + 10);
    EXPECT_THROW(load_idx_images(dir / "img3", dir / "lab3"), FormatError);
}

TEST(Idx, SaveLoadRoundTrip) {
    TempDir dir;
    write_idx(dir / "img", dir / "lab", 6, 6);
    auto ds = load_idx_images(dir / "img", dir / "lab");
    save_idx_images(ds, dir / "img2", dir / "lab2");
    auto back = load_idx_images(dir / "img2", dir / "lab2");
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
}

TEST(Manifest, BlobsAndKCheck) {
    nlohmann::json m = {{"kind", "blobs"}, {"K", 3}, {"dim", 2}, {"points_per_cluster", 5}, {"seed", 1}};
    auto ds = load_dataset(m);
    EXPECT_EQ(ds.num_classes, 3);
    EXPECT_EQ(ds.size(), 15u);
    m["kind"] = "nope";
    EXPECT_THROW(load_dataset(m), ConfigError);
}

TEST(Manifest, CsvKMismatch) {
    TempDir dir;
    write_text(dir / "two.csv", "1,2,a\n3,4,b\n");
    nlohmann::json m = {{"kind", "csv"}, {"K", 3}, {"paths", {{"csv", "two.csv"}}}, {"label_column", 2}};
    EXPECT_THROW(load_dataset(m, dir / ""), DataError);
    m["K"] = 2;
    EXPECT_EQ(load_dataset(m, dir / "").size(), 2u);
}

TEST(Sampler, EpochIsPermutationAndDeterministic) {
    BatchSampler sampler(10, 4, 5);
    EXPECT_EQ(sampler.batches_per_epoch(), 3u);
    auto e0 = sampler.epoch(0);
    ASSERT_EQ(e0.size(), 3u);
    EXPECT_EQ(e0.back().size(), 2u);
    std::vector<std::size_t> all;
    for (const auto& b : e0) {
        all.insert(all.end(), b.begin(), b.end());
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(all[i], i);
    }
    EXPECT_EQ(sampler.epoch(0), BatchSampler(10, 4, 5).epoch(0));
    EXPECT_NE(sampler.epoch(0), sampler.epoch(1));
}

TEST(Sampler, NoShuffleIsSequential) {
    BatchSampler sampler(5, 2, 0, false);
    auto e = sampler.epoch(3);
    EXPECT_EQ(e[0], (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(e[2], (std::vector<std::size_t>{4}));
}
