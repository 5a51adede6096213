#include <gtest/gtest.h>

#include <limits>

#include "concurl/kmeans.hpp"
#include "concurl/metrics.hpp"

using namespace concurl;

namespace {

// Lowest within-cluster sum of squares over every 2-partition of a 1-D set.
std::vector<int> exhaustive_two_partition(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_labels;
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        double sum[2] = {0, 0}, cnt[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const int c = (mask >> i) & 1u;
            sum[c] += xs[i];
            cnt[c] += 1;
        }
        double wss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = (mask >> i) & 1u;
            const double d = xs[i] - sum[c] / cnt[c];
            wss += d * d;
        }
        if (wss < best) {
            best = wss;
            best_labels.clear();
            for (std::size_t i = 0; i < n; ++i) {
                best_labels.push_back(static_cast<int>((mask >> i) & 1u));
            }
        }
    }
    return best_labels;
}

}  // namespace

TEST(KMeans, SeparatedSingletonsRecovered) {
    Tensor x = Tensor::matrix({{0, 0}, {10, 0}, {0, 10}, {10, 10}});
    auto labels = kmeans(x, 4, 10, 1);
    std::vector<int> truth{0, 1, 2, 3};
    EXPECT_EQ(cluster_accuracy(labels, truth).acc, 1.0);
}

TEST(KMeans, SingleClusterAllZero) {
    Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    for (int y : kmeans(x, 1, 3, 0)) {
        EXPECT_EQ(y, 0);
    }
}

TEST(KMeans, OneDimensionalMatchesExhaustivePartition) {
    std::vector<double> xs{0, 0.1, 0.9, 1.0};
    Tensor x({4, 1}, std::vector<Real>(xs.begin(), xs.end()));
    auto labels = kmeans(x, 2, 10, 3);
    auto expect = exhaustive_two_partition(xs);
    EXPECT_EQ(cluster_accuracy(labels, expect).acc, 1.0);
    EXPECT_EQ(labels[0], labels[1]);
    EXPECT_EQ(labels[2], labels[3]);
    EXPECT_NE(labels[0], labels[2]);
}

TEST(KMeans, TooFewPointsThrows) {
    Tensor x = Tensor::matrix({{1, 2}});
    EXPECT_THROW(kmeans(x, 2, 1, 0), DataError);
}

TEST(KMeans, DeterministicUnderSeed) {
    Tensor x = Tensor::matrix({{0, 1}, {2, 1}, {5, 5}, {6, 5}, {9, 0}, {9, 1}});
    EXPECT_EQ(kmeans(x, 3, 4, 42), kmeans(x, 3, 4, 42));
}
