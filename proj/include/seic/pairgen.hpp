#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "seic/embedding.hpp"
#include "seic/errors.hpp"

namespace seic {

struct NounVocabulary {
    std::vector<std::string> nouns;
    EmbeddingMatrix embeddings;  // |N| x D, normalized

    void check() const {
        if (nouns.size() != static_cast<size_t>(embeddings.rows()))
            throw DimMismatchError("NounVocabulary: noun count != embedding rows");
        std::set<std::string> uniq(nouns.begin(), nouns.end());
        if (uniq.size() != nouns.size()) throw PreconditionError("NounVocabulary: duplicate nouns");
    }
};

// One noun per line, UTF-8. Blank lines skipped.
inline std::vector<std::string> read_noun_list(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open noun list: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

struct PairGenConfig {
    int K = 10;
    int k1 = 200;          // candidate nouns per cluster center
    int k2 = 50;           // neighbors per image
    double text_temp = 0.01;
    uint64_t seed = 0;
    int kmeans_restarts = 10;
    int kmeans_max_iter = 100;
};

struct PairSet {
    EmbeddingMatrix image;
    EmbeddingMatrix text;
    std::vector<int> candidate_indices;  // into the vocabulary
};

// ---- k-means ----------------------------------------------------------------

namespace detail {

inline std::vector<int> kmeanspp_seed(const Matrix& X, int K, std::mt19937_64& rng) {
    const Eigen::Index n = X.rows();
    std::vector<int> centers;
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.push_back(static_cast<int>(first(rng)));
    Eigen::VectorXd d2 = (X.rowwise() - X.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < K) {
        double total = d2.sum();
        int next = -1;
        if (total <= 0) {
            // all remaining points coincide with a chosen center; pick any unchosen
            for (Eigen::Index i = 0; i < n; ++i)
                if (std::find(centers.begin(), centers.end(), static_cast<int>(i)) == centers.end()) {
                    next = static_cast<int>(i);
                    break;
                }
        } else {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    next = static_cast<int>(i);
                    break;
                }
            }
            if (next < 0) next = static_cast<int>(n - 1);
        }
        centers.push_back(next);
        d2 = d2.cwiseMin((X.rowwise() - X.row(next)).rowwise().squaredNorm());
    }
    return centers;
}

struct LloydResult {
    Matrix centers;
    std::vector<int> labels;
    double inertia = 0;
};

inline LloydResult lloyd(const Matrix& X, int K, std::mt19937_64& rng, int max_iter, double rel_tol) {
    const Eigen::Index n = X.rows();
    LloydResult res;
    auto seeds = kmeanspp_seed(X, K, rng);
    res.centers.resize(K, X.cols());
    for (int k = 0; k < K; ++k) res.centers.row(k) = X.row(seeds[static_cast<size_t>(k)]);
    res.labels.assign(static_cast<size_t>(n), 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        double inertia = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bk = 0;
            for (int k = 0; k < K; ++k) {
                double d = (X.row(i) - res.centers.row(k)).squaredNorm();
                if (d < best) {
                    best = d;
                    bk = k;
                }
            }
            res.labels[static_cast<size_t>(i)] = bk;
            inertia += best;
        }
        Matrix sums = Matrix::Zero(K, X.cols());
        std::vector<int> counts(static_cast<size_t>(K), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.labels[static_cast<size_t>(i)]) += X.row(i);
            counts[static_cast<size_t>(res.labels[static_cast<size_t>(i)])]++;
        }
        for (int k = 0; k < K; ++k) {
            if (counts[static_cast<size_t>(k)] > 0)
                res.centers.row(k) = sums.row(k) / counts[static_cast<size_t>(k)];
            else {
                // re-seed empty cluster at the farthest point from its center
                Eigen::Index far = 0;
                double best = -1;
                for (Eigen::Index i = 0; i < n; ++i) {
                    double d = (X.row(i) - res.centers.row(res.labels[static_cast<size_t>(i)])).squaredNorm();
                    if (d > best) {
                        best = d;
                        far = i;
                    }
                }
                res.centers.row(k) = X.row(far);
            }
        }
        res.inertia = inertia;
        if (prev_inertia < std::numeric_limits<double>::infinity()) {
            double denom = std::max(prev_inertia, 1e-12);
            if ((prev_inertia - inertia) / denom < rel_tol && prev_inertia >= inertia) break;
        }
        prev_inertia = inertia;
    }
    return res;
}

}  // namespace detail

// Lloyd with k-means++ seeding, several restarts, best inertia kept.
inline Matrix kmeans_centers(const EmbeddingMatrix& V, int K, uint64_t seed, int restarts = 10, int max_iter = 100,
                             std::vector<int>* out_labels = nullptr) {
    if (V.rows() < K) throw PreconditionError("kmeans_centers: N < K");
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < V.rows() && static_cast<int>(distinct.size()) < K; ++i) {
        std::vector<double> row(V.data.row(i).data(), V.data.row(i).data() + V.dim());
        distinct.insert(row);
    }
    if (static_cast<int>(distinct.size()) < K) throw DegenerateDataError("kmeans_centers: fewer than K distinct rows");
    std::mt19937_64 rng(seed);
    detail::LloydResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        auto res = detail::lloyd(V.data, K, rng, max_iter, 1e-4);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    if (out_labels) *out_labels = best.labels;
    return best.centers;
}

// Union over centers of the k1 highest-cosine nouns; ties broken by lower index.
inline std::vector<int> select_candidate_nouns(const Matrix& centers, const NounVocabulary& vocab, int k1) {
    vocab.check();
    if (!vocab.embeddings.normalized) throw PreconditionError("select_candidate_nouns: vocabulary not normalized");
    const Eigen::Index nv = vocab.embeddings.rows();
    if (k1 < 1 || k1 > nv) throw PreconditionError("select_candidate_nouns: k1 out of range");
    std::set<int> chosen;
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
        Eigen::VectorXd sims = vocab.embeddings.data * centers.row(c).transpose();
        std::vector<int> idx(static_cast<size_t>(nv));
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k1, idx.end(), [&](int a, int b) {
            if (sims[a] != sims[b]) return sims[a] > sims[b];
            return a < b;
        });
        chosen.insert(idx.begin(), idx.begin() + k1);
    }
    return std::vector<int>(chosen.begin(), chosen.end());
}

// top-k2 neighbor weights for one image: softmax over the retained
// similarities divided by text_temp; zero elsewhere.
struct SparseWeights {
    std::vector<int> idx;  // candidate indices, highest similarity first
    Eigen::VectorXd w;     // softmax weights, sum to 1
};

inline SparseWeights text_feature_weights(const Eigen::RowVectorXd& v, const EmbeddingMatrix& candidates, int k2,
                                          double text_temp) {
    const Eigen::Index nc = candidates.rows();
    Eigen::VectorXd sims = candidates.data * v.transpose();
    std::vector<int> idx(static_cast<size_t>(nc));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k2, idx.end(), [&](int a, int b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    });
    idx.resize(static_cast<size_t>(k2));
    SparseWeights sw;
    sw.idx = idx;
    sw.w.resize(k2);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k2; ++j) mx = std::max(mx, sims[idx[static_cast<size_t>(j)]] / text_temp);
    double z = 0;
    for (int j = 0; j < k2; ++j) {
        sw.w[j] = std::exp(sims[idx[static_cast<size_t>(j)]] / text_temp - mx);
        z += sw.w[j];
    }
    sw.w /= z;
    return sw;
}

// t_i = row-normalized sum of softmax(top-k2 cosine sims / text_temp) * candidates.
inline EmbeddingMatrix build_text_features(const EmbeddingMatrix& V, const EmbeddingMatrix& candidates, int k2,
                                           double text_temp) {
    if (!V.normalized || !candidates.normalized)
        throw PreconditionError("build_text_features: inputs must be normalized");
    if (k2 < 1 || k2 > candidates.rows()) throw PreconditionError("build_text_features: k2 out of range");
    if (text_temp <= 0) throw PreconditionError("build_text_features: text_temp must be > 0");
    const Eigen::Index n = V.rows();
    EmbeddingMatrix out;
    out.data.resize(n, V.dim());
    out.ids = V.ids;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto sw = text_feature_weights(V.data.row(i), candidates, k2, text_temp);
        Eigen::RowVectorXd t = Eigen::RowVectorXd::Zero(V.dim());
        for (int j = 0; j < k2; ++j) t += sw.w[j] * candidates.data.row(sw.idx[static_cast<size_t>(j)]);
        double norm = t.norm();
        if (norm <= 1e-12) throw ZeroRowError("build_text_features: degenerate text feature for row " + std::to_string(i));
        out.data.row(i) = t / norm;
    }
    out.normalized = true;
    return out;
}

inline PairSet generate_pairs(const EmbeddingMatrix& V, const NounVocabulary& vocab, const PairGenConfig& cfg) {
    if (!V.normalized) throw PreconditionError("generate_pairs: image embeddings must be normalized");
    Matrix centers = kmeans_centers(V, cfg.K, cfg.seed, cfg.kmeans_restarts, cfg.kmeans_max_iter);
    PairSet ps;
    ps.candidate_indices = select_candidate_nouns(centers, vocab, cfg.k1);
    if (cfg.k2 > static_cast<int>(ps.candidate_indices.size()))
        throw PreconditionError("generate_pairs: k2 (" + std::to_string(cfg.k2) + ") exceeds candidate subset size (" +
                                std::to_string(ps.candidate_indices.size()) + ")");
    EmbeddingMatrix cand;
    cand.data.resize(static_cast<Eigen::Index>(ps.candidate_indices.size()), V.dim());
    for (size_t j = 0; j < ps.candidate_indices.size(); ++j) {
        cand.data.row(static_cast<Eigen::Index>(j)) = vocab.embeddings.data.row(ps.candidate_indices[j]);
        cand.ids.push_back(vocab.nouns[static_cast<size_t>(ps.candidate_indices[j])]);
    }
    cand.normalized = vocab.embeddings.normalized;
    ps.image = V;
    ps.text = build_text_features(V, cand, cfg.k2, cfg.text_temp);
    return ps;
}

}  // namespace seic
