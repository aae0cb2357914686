#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seic/autodiff.hpp"
#include "seic/errors.hpp"
#include "seic/heads.hpp"

namespace seic {

struct LossWeights {
    double alpha = 0.5;  // instance
    double beta = 1.0;   // assignment
    double gamma = 1.0;  // center
    double delta = 2.0;  // balance
};

// EMA of the normalized pseudo-label histogram (image modality).
struct BalanceState {
    Eigen::VectorXd h;
    double m = 0.9;
    double h_floor = 1e-4;

    static BalanceState uniform(int K, double momentum = 0.9) {
        BalanceState s;
        s.h = Eigen::VectorXd::Constant(K, 1.0 / K);
        s.m = momentum;
        return s;
    }
};

inline BalanceState update_balance_state(const BalanceState& state, const Matrix& Pv) {
    if (Pv.rows() < 1) throw PreconditionError("update_balance_state: empty batch");
    BalanceState out = state;
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(state.h.size());
    for (Eigen::Index i = 0; i < Pv.rows(); ++i) hist[argmax_row(Pv, i)] += 1.0;
    hist /= static_cast<double>(Pv.rows());
    out.h = state.m * state.h + (1.0 - state.m) * hist;
    out.h = out.h.cwiseMax(state.h_floor);
    out.h /= out.h.sum();
    return out;
}

// EMA of batch mean/variance of max prediction probabilities.
struct ConfidenceState {
    double mu_t = 0.5;
    double sigma2_t = 1.0;
    double momentum = 0.999;
    double sigma2_floor = 1e-4;

    static ConfidenceState init(int K, double momentum = 0.999) {
        ConfidenceState s;
        s.mu_t = 1.0 / K;
        s.sigma2_t = 1.0;
        s.momentum = momentum;
        return s;
    }
};

inline Eigen::VectorXd max_probs(const Matrix& P) {
    Eigen::VectorXd mp(P.rows());
    for (Eigen::Index i = 0; i < P.rows(); ++i) mp[i] = P.row(i).maxCoeff();
    return mp;
}

inline ConfidenceState update_confidence_state(const ConfidenceState& state, const Eigen::VectorXd& maxp) {
    if (maxp.size() < 2) throw PreconditionError("update_confidence_state: batch size must be >= 2");
    ConfidenceState out = state;
    double mean = maxp.mean();
    double var = (maxp.array() - mean).square().mean();  // population variance
    out.mu_t = state.momentum * state.mu_t + (1.0 - state.momentum) * mean;
    out.sigma2_t = state.momentum * state.sigma2_t + (1.0 - state.momentum) * var;
    out.sigma2_t = std::max(out.sigma2_t, state.sigma2_floor);
    return out;
}

// Truncated-Gaussian confidence weight: 1 at and above mu_t, Gaussian decay below.
inline Eigen::VectorXd confidence_weights(const Eigen::VectorXd& maxp, const ConfidenceState& state) {
    Eigen::VectorXd w(maxp.size());
    for (Eigen::Index i = 0; i < maxp.size(); ++i) {
        if (maxp[i] >= state.mu_t)
            w[i] = 1.0;
        else {
            double d = maxp[i] - state.mu_t;
            w[i] = std::exp(-d * d / (2.0 * state.sigma2_t));
        }
    }
    return w;
}

// ---- tape-graph loss builders ---------------------------------------------------

namespace graph {

inline int symmetric_nce(ad::Tape& t, int sim) {
    int l_fwd = t.nce_diag(sim);
    int l_bwd = t.nce_diag(t.transpose(sim));
    return t.wsum({l_fwd, l_bwd}, {0.5, 0.5});
}

// Eq. form: bidirectional InfoNCE over unit-norm projected features; tau is a node.
inline int instance_loss(ad::Tape& t, int vt, int tt, int tau) {
    return symmetric_nce(t, t.div_scalar_node(t.matmul_nt(vt, tt), tau));
}

// Column-wise contrastive loss over assignment matrices; columns unit-normalized.
inline int assignment_loss(ad::Tape& t, int pv, int pt, double tau_hat) {
    for (int p : {pv, pt}) {
        const Matrix& P = t.val(p);
        for (Eigen::Index k = 0; k < P.cols(); ++k)
            if (P.col(k).norm() <= 1e-12)
                throw DegenerateColumnError("assignment_loss: all-zero probability column " + std::to_string(k));
    }
    int cv = t.normalize_rows(t.transpose(pv));
    int ct = t.normalize_rows(t.transpose(pt));
    return symmetric_nce(t, t.scale(t.matmul_nt(cv, ct), 1.0 / tau_hat));
}

struct CenterResult {
    int mu = -1;              // K x D node, masked rows zero
    std::vector<char> mask;   // true where the cluster is populated
};

// Probability-weighted centers: gather by argmax, renormalize p_.k within the
// cluster, weighted-sum the projected features, unit-normalize. strategy
// "mean" replaces the weights by uniform within-cluster weights (ablation).
inline CenterResult cluster_centers(ad::Tape& t, int p, int xt, bool mean_strategy = false) {
    const Matrix& P = t.val(p);
    const Eigen::Index K = P.cols();
    Matrix mask_m = Matrix::Zero(P.rows(), K);
    std::vector<char> mask(static_cast<size_t>(K), 0);
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        int k = argmax_row(P, i);
        mask_m(i, k) = 1.0;
        mask[static_cast<size_t>(k)] = 1;
    }
    int weights;
    if (mean_strategy) {
        Matrix uni = mask_m;
        for (Eigen::Index k = 0; k < K; ++k) {
            double c = uni.col(k).sum();
            if (c > 0) uni.col(k) /= c;
        }
        weights = t.cst(uni);
    } else {
        weights = t.cluster_weights(p, mask_m);
    }
    CenterResult r;
    r.mask = mask;
    r.mu = t.normalize_rows(t.matmul_tn(weights, xt), mask);
    return r;
}

// Contrastive loss over non-masked center pairs; 0 when fewer than 2 populated.
inline int center_loss(ad::Tape& t, int mv, int mt, const std::vector<char>& mask, double tau_hat) {
    std::vector<int> keep;
    for (size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) keep.push_back(static_cast<int>(k));
    if (keep.size() < 2) return t.cst(0.0);
    int gv = t.gather_rows(mv, keep);
    int gt = t.gather_rows(mt, keep);
    return symmetric_nce(t, t.scale(t.matmul_nt(gv, gt), 1.0 / tau_hat));
}

// Eq. 10: sum_j [bv_j log bv_j + bt_j log bt_j] / h_j
inline int balance_loss(ad::Tape& t, int pv, int pt, const Eigen::VectorXd& h) {
    int e = t.add(t.xlogx(t.colmean(pv)), t.xlogx(t.colmean(pt)));
    return t.sum(t.div_const_rowvec(e, h.transpose()));
}

// static entropy regularizer ablation: Eq. 10 with h_j == 1
inline int entropy_balance_loss(ad::Tape& t, int pv, int pt) {
    return balance_loss(t, pv, pt, Eigen::VectorXd::Ones(t.val(pv).cols()));
}

// Eq. 13: mean weighted cross-entropy against gradient-stopped pseudo-labels.
inline int self_loss(ad::Tape& t, int q, const std::vector<int>& pseudo_labels, const Eigen::VectorXd& w) {
    return t.ce_pick(q, pseudo_labels, w);
}

}  // namespace graph

// ---- plain value wrappers (tests, oracles, logging) ------------------------------

inline double instance_loss(const Matrix& Vt, const Matrix& Tt, double tau) {
    if (Vt.rows() != Tt.rows() || Vt.rows() < 2) throw PreconditionError("instance_loss: batch size must match, >= 2");
    if (tau <= 0) throw PreconditionError("instance_loss: tau must be > 0");
    ad::Tape t;
    return t.sval(graph::instance_loss(t, t.cst(Vt), t.cst(Tt), t.cst(tau)));
}

inline double assignment_loss(const Matrix& Pv, const Matrix& Pt, double tau_hat) {
    if (Pv.cols() < 2) throw PreconditionError("assignment_loss: K must be >= 2");
    ad::Tape t;
    return t.sval(graph::assignment_loss(t, t.cst(Pv), t.cst(Pt), tau_hat));
}

struct Centers {
    Matrix mu;  // K x D, masked rows zero
    std::vector<char> mask;
};

inline Centers cluster_centers(const Matrix& P, const Matrix& Xt, bool mean_strategy = false) {
    ad::Tape t;
    auto r = graph::cluster_centers(t, t.cst(P), t.cst(Xt), mean_strategy);
    return {t.val(r.mu), r.mask};
}

inline double center_loss(const Matrix& Mv, const Matrix& Mt, const std::vector<char>& mask, double tau_hat) {
    ad::Tape t;
    return t.sval(graph::center_loss(t, t.cst(Mv), t.cst(Mt), mask, tau_hat));
}

inline double balance_loss(const Matrix& Pv, const Matrix& Pt, const BalanceState& state) {
    ad::Tape t;
    return t.sval(graph::balance_loss(t, t.cst(Pv), t.cst(Pt), state.h));
}

inline double entropy_balance_loss(const Matrix& Pv, const Matrix& Pt) {
    ad::Tape t;
    return t.sval(graph::entropy_balance_loss(t, t.cst(Pv), t.cst(Pt)));
}

enum class SelfMode { softmatch, fixmatch, align_loss };

inline std::string to_string(SelfMode m) {
    switch (m) {
        case SelfMode::softmatch: return "softmatch";
        case SelfMode::fixmatch: return "fixmatch";
        case SelfMode::align_loss: return "align_loss";
    }
    throw ConfigError("bad SelfMode");
}

inline SelfMode self_mode_from_string(const std::string& s) {
    if (s == "softmatch") return SelfMode::softmatch;
    if (s == "fixmatch") return SelfMode::fixmatch;
    if (s == "align_loss") return SelfMode::align_loss;
    throw ConfigError("unknown self mode: " + s);
}

inline constexpr double kFixMatchThreshold = 0.95;

inline Eigen::VectorXd self_training_weights(const Eigen::VectorXd& maxp, const ConfidenceState& state,
                                             SelfMode mode) {
    if (mode == SelfMode::fixmatch) {
        Eigen::VectorXd w(maxp.size());
        for (Eigen::Index i = 0; i < maxp.size(); ++i) w[i] = maxp[i] >= kFixMatchThreshold ? 1.0 : 0.0;
        return w;
    }
    return confidence_weights(maxp, state);
}

inline double self_loss(const Matrix& Q, const std::vector<int>& pseudo_labels, const Eigen::VectorXd& w) {
    if (static_cast<Eigen::Index>(pseudo_labels.size()) != Q.rows() || w.size() != Q.rows())
        throw PreconditionError("self_loss: size mismatch");
    ad::Tape t;
    return t.sval(graph::self_loss(t, t.cst(Q), pseudo_labels, w));
}

struct AlignParts {
    double ins = 0, ass = 0, ctr = 0, bal = 0;
};

inline double align_loss(const AlignParts& parts, const LossWeights& w) {
    auto chk = [](double v, const char* name) {
        if (!std::isfinite(v)) throw NonFiniteLossError(std::string("align_loss: non-finite part ") + name);
        return v;
    };
    return w.alpha * chk(parts.ins, "L_ins") + w.beta * chk(parts.ass, "L_ass") + w.gamma * chk(parts.ctr, "L_ctr") +
           w.delta * chk(parts.bal, "L_bal");
}

}  // namespace seic
