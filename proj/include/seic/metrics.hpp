#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seic/errors.hpp"

namespace seic {

namespace detail {

// O(n^3) Hungarian algorithm (Jonker-style with potentials), minimizes cost.
// Returns assignment: row i -> match[i].
inline std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n + 1)), v(static_cast<size_t>(n + 1));
    std::vector<int> p(static_cast<size_t>(n + 1)), way(static_cast<size_t>(n + 1));
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n + 1), INF);
        std::vector<char> used(static_cast<size_t>(n + 1), false);
        do {
            used[static_cast<size_t>(j0)] = true;
            int i0 = p[static_cast<size_t>(j0)], j1 = -1;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                             u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> match(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)] > 0) match[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    return match;
}

inline void check_labels(const std::vector<int>& labels, int K, const char* who) {
    for (int l : labels)
        if (l < 0 || l >= K) throw LabelRangeError(std::string(who) + ": label " + std::to_string(l) + " outside [0," +
                                                   std::to_string(K) + ")");
}

}  // namespace detail

// Unsupervised clustering accuracy: best one-to-one cluster->class mapping
// over the KxK contingency matrix.
inline double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int K) {
    if (pred.size() != truth.size() || pred.empty())
        throw PreconditionError("clustering_accuracy: size mismatch or empty");
    detail::check_labels(pred, K, "clustering_accuracy(pred)");
    detail::check_labels(truth, K, "clustering_accuracy(truth)");
    std::vector<std::vector<double>> cont(static_cast<size_t>(K), std::vector<double>(static_cast<size_t>(K), 0.0));
    for (size_t i = 0; i < pred.size(); ++i)
        cont[static_cast<size_t>(pred[i])][static_cast<size_t>(truth[i])] += 1.0;
    // maximize agreements == minimize negated contingency
    std::vector<std::vector<double>> cost = cont;
    for (auto& row : cost)
        for (auto& x : row) x = -x;
    auto match = detail::hungarian_min(cost);
    double agree = 0;
    for (int k = 0; k < K; ++k) agree += cont[static_cast<size_t>(k)][static_cast<size_t>(match[static_cast<size_t>(k)])];
    return agree / static_cast<double>(pred.size());
}

namespace detail {

struct Contingency {
    std::vector<std::vector<long>> n;  // ka x kb
    std::vector<long> a, b;
    long total = 0;
    int ka = 0, kb = 0;
};

inline Contingency contingency(const std::vector<int>& x, const std::vector<int>& y) {
    if (x.size() != y.size() || x.empty()) throw PreconditionError("contingency: size mismatch or empty");
    Contingency c;
    for (int v : x) c.ka = std::max(c.ka, v + 1);
    for (int v : y) c.kb = std::max(c.kb, v + 1);
    c.n.assign(static_cast<size_t>(c.ka), std::vector<long>(static_cast<size_t>(c.kb), 0));
    c.a.assign(static_cast<size_t>(c.ka), 0);
    c.b.assign(static_cast<size_t>(c.kb), 0);
    for (size_t i = 0; i < x.size(); ++i) {
        c.n[static_cast<size_t>(x[i])][static_cast<size_t>(y[i])]++;
        c.a[static_cast<size_t>(x[i])]++;
        c.b[static_cast<size_t>(y[i])]++;
        c.total++;
    }
    return c;
}

inline double entropy(const std::vector<long>& counts, long total) {
    double h = 0;
    for (long c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace detail

// NMI with arithmetic-mean normalization. Single cluster in both partitions:
// 1.0 if the partitions are identical, else 0.0.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    auto c = detail::contingency(pred, truth);
    double ha = detail::entropy(c.a, c.total);
    double hb = detail::entropy(c.b, c.total);
    // both partitions single-cluster: identical as partitions
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    double mi = 0;
    for (int i = 0; i < c.ka; ++i)
        for (int j = 0; j < c.kb; ++j) {
            long nij = c.n[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (nij == 0) continue;
            double pij = static_cast<double>(nij) / static_cast<double>(c.total);
            double pi = static_cast<double>(c.a[static_cast<size_t>(i)]) / static_cast<double>(c.total);
            double pj = static_cast<double>(c.b[static_cast<size_t>(j)]) / static_cast<double>(c.total);
            mi += pij * std::log(pij / (pi * pj));
        }
    return mi / (0.5 * (ha + hb));
}

inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
    auto c = detail::contingency(pred, truth);
    auto comb2 = [](long n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); };
    double sum_ij = 0;
    for (auto& row : c.n)
        for (long nij : row) sum_ij += comb2(nij);
    double sum_a = 0, sum_b = 0;
    for (long ai : c.a) sum_a += comb2(ai);
    for (long bj : c.b) sum_b += comb2(bj);
    double total2 = comb2(c.total);
    double expected = sum_a * sum_b / total2;
    double maxidx = 0.5 * (sum_a + sum_b);
    if (maxidx == expected) return pred == truth ? 1.0 : 0.0;  // degenerate partitions
    return (sum_ij - expected) / (maxidx - expected);
}

// Population std-dev of the K normalized label frequencies (Fig.-style collapse diagnostic).
inline double histogram_std(const std::vector<int>& labels, int K) {
    if (labels.empty()) throw PreconditionError("histogram_std: empty labels");
    detail::check_labels(labels, K, "histogram_std");
    std::vector<double> freq(static_cast<size_t>(K), 0.0);
    for (int l : labels) freq[static_cast<size_t>(l)] += 1.0;
    for (auto& f : freq) f /= static_cast<double>(labels.size());
    double mean = 1.0 / static_cast<double>(K);
    double var = 0;
    for (double f : freq) var += (f - mean) * (f - mean);
    return std::sqrt(var / static_cast<double>(K));
}

struct ClusteringReport {
    std::vector<int> labels;
    double acc = -1, nmi = -1, ari = -1;  // -1 when no ground truth
    std::vector<long> histogram;
    double hist_std = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["labels"] = labels;
        if (acc >= 0) {
            j["acc"] = acc;
            j["nmi"] = nmi;
            j["ari"] = ari;
        }
        j["histogram"] = histogram;
        j["hist_std"] = hist_std;
        return j;
    }
};

inline ClusteringReport make_report(const std::vector<int>& pred, const std::vector<int>* truth, int K) {
    ClusteringReport r;
    r.labels = pred;
    r.histogram.assign(static_cast<size_t>(K), 0);
    detail::check_labels(pred, K, "make_report");
    for (int l : pred) r.histogram[static_cast<size_t>(l)]++;
    r.hist_std = histogram_std(pred, K);
    if (truth) {
        r.acc = clustering_accuracy(pred, *truth, K);
        r.nmi = seic::nmi(pred, *truth);
        r.ari = seic::ari(pred, *truth);
    }
    return r;
}

}  // namespace seic
