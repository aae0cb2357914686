#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "seic/metrics.hpp"

using namespace seic;

namespace {

// exhaustive-permutation accuracy oracle for small K
double brute_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int K) {
    std::vector<int> perm(static_cast<size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0;
    do {
        long agree = 0;
        for (size_t i = 0; i < pred.size(); ++i)
            if (perm[static_cast<size_t>(pred[i])] == truth[i]) ++agree;
        best = std::max(best, static_cast<double>(agree) / static_cast<double>(pred.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<int> random_labels(size_t n, int K, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, K - 1);
    std::vector<int> out(n);
    for (auto& x : out) x = u(rng);
    return out;
}

}  // namespace

TEST_CASE("accuracy: perfect predictions and relabeled predictions score 1") {
    std::vector<int> truth = {0, 0, 1, 1, 2, 2};
    CHECK(clustering_accuracy(truth, truth, 3) == 1.0);
    std::vector<int> relabeled = {2, 2, 0, 0, 1, 1};
    CHECK(clustering_accuracy(relabeled, truth, 3) == 1.0);
}

TEST_CASE("accuracy: one mistake out of four") {
    std::vector<int> truth = {0, 0, 1, 1};
    std::vector<int> pred = {1, 1, 0, 1};
    CHECK(clustering_accuracy(pred, truth, 2) == Catch::Approx(0.75));
}

TEST_CASE("accuracy matches the exhaustive permutation oracle") {
    for (int K : {2, 3, 4, 5, 6}) {
        auto truth = random_labels(200, K, static_cast<uint64_t>(K));
        auto pred = random_labels(200, K, static_cast<uint64_t>(K) + 100);
        INFO("K=" << K);
        CHECK(clustering_accuracy(pred, truth, K) == Catch::Approx(brute_accuracy(pred, truth, K)).epsilon(1e-12));
    }
    // structured case: noisy copy of the truth
    auto truth = random_labels(200, 5, 7);
    auto pred = truth;
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> u(0, 4);
    for (size_t i = 0; i < pred.size(); i += 7) pred[i] = u(rng);
    CHECK(clustering_accuracy(pred, truth, 5) == Catch::Approx(brute_accuracy(pred, truth, 5)).epsilon(1e-12));
}

TEST_CASE("accuracy rejects out-of-range labels") {
    CHECK_THROWS_AS(clustering_accuracy({0, 3}, {0, 1}, 2), LabelRangeError);
    CHECK_THROWS_AS(clustering_accuracy({0, -1}, {0, 1}, 2), LabelRangeError);
}

TEST_CASE("nmi: identical partitions give 1, independent blocks give 0") {
    std::vector<int> a = {0, 0, 1, 1, 2, 2};
    CHECK(nmi(a, a) == Catch::Approx(1.0));
    std::vector<int> rel = {1, 1, 2, 2, 0, 0};
    CHECK(nmi(rel, a) == Catch::Approx(1.0));
    // each predicted cluster split evenly across both truth classes
    std::vector<int> x = {0, 0, 1, 1};
    std::vector<int> y = {0, 1, 0, 1};
    CHECK(nmi(x, y) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("nmi: single-cluster edge cases") {
    std::vector<int> ones = {0, 0, 0, 0};
    CHECK(nmi(ones, ones) == 1.0);
    std::vector<int> split = {0, 0, 1, 1};
    CHECK(nmi(ones, split) == 0.0);
}

TEST_CASE("nmi hand value: 2x2 contingency [[2,0],[0,2]] vs [[1,1],[1,1]]") {
    // half the points flipped: MI known in closed form
    std::vector<int> truth = {0, 0, 1, 1};
    std::vector<int> pred = {0, 1, 1, 0};
    CHECK(nmi(pred, truth) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ari: identical gives 1, random-like structure near 0, disagreement negative") {
    std::vector<int> a = {0, 0, 0, 1, 1, 1};
    CHECK(ari(a, a) == Catch::Approx(1.0));
    std::vector<int> anti = {0, 1, 0, 1, 0, 1};
    CHECK(ari(anti, a) < 0.1);
    auto t = random_labels(2000, 3, 1);
    auto p = random_labels(2000, 3, 2);
    CHECK(std::abs(ari(p, t)) < 0.05);
}

TEST_CASE("ari hand value for a known 6-point split") {
    std::vector<int> truth = {0, 0, 0, 1, 1, 1};
    std::vector<int> pred = {0, 0, 1, 1, 1, 1};
    // contingency [[2,0],[1,3]]; sum_ij C2 = 1+0+0+3 = 4; a: C2(2)+C2(4)=1+6=7; b: C2(3)+C2(3)=3+3=6
    // expected = 7*6/15 = 2.8; max = 6.5; ari = (4-2.8)/(6.5-2.8)
    CHECK(ari(pred, truth) == Catch::Approx((4.0 - 2.8) / (6.5 - 2.8)).epsilon(1e-12));
}

TEST_CASE("histogram_std: uniform labels give 0, fully collapsed gives the max") {
    std::vector<int> uniform = {0, 1, 2, 0, 1, 2};
    CHECK(histogram_std(uniform, 3) == Catch::Approx(0.0).margin(1e-12));
    std::vector<int> collapsed(12, 0);
    // freqs (1,0,0), mean 1/3 -> var = ((2/3)^2 + 2*(1/3)^2)/3
    double expect = std::sqrt(((2.0 / 3) * (2.0 / 3) + 2 * (1.0 / 9)) / 3.0);
    CHECK(histogram_std(collapsed, 3) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("make_report assembles metrics, histogram, and json") {
    std::vector<int> truth = {0, 0, 1, 1, 2, 2};
    std::vector<int> pred = {2, 2, 0, 0, 1, 2};
    auto r = make_report(pred, &truth, 3);
    CHECK(r.acc == Catch::Approx(clustering_accuracy(pred, truth, 3)));
    CHECK(r.nmi == Catch::Approx(nmi(pred, truth)));
    CHECK(r.ari == Catch::Approx(ari(pred, truth)));
    CHECK(r.histogram == std::vector<long>{2, 1, 3});
    auto j = r.to_json();
    CHECK(j["acc"].get<double>() == Catch::Approx(r.acc));
    CHECK(j["labels"].size() == 6);

    auto noref = make_report(pred, nullptr, 3);
    CHECK(noref.acc == -1);
    CHECK(!noref.to_json().contains("acc"));
}
