#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "seic/embedding.hpp"
#include "seic/errors.hpp"

namespace seic {

struct SynthConfig {
    int N = 2000;
    int D = 64;
    int K = 5;
    double separation_deg = 60.0;  // minimum pairwise angle between cluster centers
    double noise_std = 0.2;        // isotropic noise added before re-normalization
    double imbalance = 1.0;        // largest:smallest cluster size ratio
    uint64_t seed = 0;
};

struct SynthData {
    EmbeddingMatrix embeddings;  // unit-norm rows
    std::vector<int> labels;
    Matrix centers;  // K x D
};

// Gaussian mixture on the unit sphere with guaranteed center separation.
inline SynthData make_synthetic_mixture(const SynthConfig& cfg) {
    if (cfg.N < cfg.K || cfg.K < 2 || cfg.D < 2) throw PreconditionError("make_synthetic_mixture: bad N/K/D");
    if (cfg.imbalance < 1.0) throw PreconditionError("make_synthetic_mixture: imbalance must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    double min_cos = std::cos(cfg.separation_deg * M_PI / 180.0);

    Matrix centers(cfg.K, cfg.D);
    for (int attempt = 0;; ++attempt) {
        if (attempt > 10000)
            throw DegenerateDataError("make_synthetic_mixture: cannot satisfy separation angle " +
                                      std::to_string(cfg.separation_deg));
        for (int k = 0; k < cfg.K; ++k) {
            for (int j = 0; j < cfg.D; ++j) centers(k, j) = nd(rng);
            centers.row(k).normalize();
        }
        bool ok = true;
        for (int a = 0; a < cfg.K && ok; ++a)
            for (int b = a + 1; b < cfg.K && ok; ++b)
                if (centers.row(a).dot(centers.row(b)) > min_cos) ok = false;
        if (ok) break;
    }

    // cluster proportions: geometric ramp from `imbalance` down to 1
    std::vector<double> w(static_cast<size_t>(cfg.K));
    for (int k = 0; k < cfg.K; ++k)
        w[static_cast<size_t>(k)] =
            cfg.K == 1 ? 1.0 : std::pow(cfg.imbalance, static_cast<double>(cfg.K - 1 - k) / (cfg.K - 1));
    double wsum = 0;
    for (double x : w) wsum += x;
    std::vector<int> sizes(static_cast<size_t>(cfg.K));
    int assigned = 0;
    for (int k = 0; k < cfg.K; ++k) {
        sizes[static_cast<size_t>(k)] = std::max(1, static_cast<int>(std::floor(cfg.N * w[static_cast<size_t>(k)] / wsum)));
        assigned += sizes[static_cast<size_t>(k)];
    }
    sizes[0] += cfg.N - assigned;  // dump the rounding remainder on the largest cluster

    SynthData out;
    out.centers = centers;
    out.embeddings.data.resize(cfg.N, cfg.D);
    out.labels.reserve(static_cast<size_t>(cfg.N));
    int row = 0;
    for (int k = 0; k < cfg.K; ++k) {
        for (int i = 0; i < sizes[static_cast<size_t>(k)]; ++i) {
            Eigen::RowVectorXd x = centers.row(k);
            for (int j = 0; j < cfg.D; ++j) x[j] += cfg.noise_std * nd(rng);
            x.normalize();
            out.embeddings.data.row(row) = x;
            out.labels.push_back(k);
            ++row;
        }
    }
    out.embeddings.ids = EmbeddingMatrix::default_ids(cfg.N);
    out.embeddings.normalized = true;
    return out;
}

inline void write_labels(const std::vector<int>& labels, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open labels for write: " + path);
    for (int l : labels) os << l << "\n";
}

inline std::vector<int> read_labels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open labels: " + path);
    std::vector<int> out;
    long v;
    while (is >> v) out.push_back(static_cast<int>(v));
    return out;
}

}  // namespace seic
