#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "seic/embedding.hpp"
#include "seic/errors.hpp"
#include "seic/heads.hpp"
#include "seic/losses.hpp"
#include "seic/metrics.hpp"
#include "seic/stub_encoder.hpp"

namespace seic {

enum class CenterStrategy { weighted, mean };
enum class BalanceMode { dynamic, entropy, off };

inline std::string to_string(CenterStrategy s) { return s == CenterStrategy::weighted ? "weighted" : "mean"; }
inline std::string to_string(BalanceMode m) {
    switch (m) {
        case BalanceMode::dynamic: return "dynamic";
        case BalanceMode::entropy: return "entropy";
        case BalanceMode::off: return "off";
    }
    throw ConfigError("bad BalanceMode");
}
inline CenterStrategy center_strategy_from_string(const std::string& s) {
    if (s == "weighted") return CenterStrategy::weighted;
    if (s == "mean") return CenterStrategy::mean;
    throw ConfigError("unknown center strategy: " + s);
}
inline BalanceMode balance_mode_from_string(const std::string& s) {
    if (s == "dynamic") return BalanceMode::dynamic;
    if (s == "entropy") return BalanceMode::entropy;
    if (s == "off") return BalanceMode::off;
    throw ConfigError("unknown balance mode: " + s);
}

struct Stage2Config {
    double lr = 0.005;  // Adam
    int epochs = 200;
    int batch = 1024;
    double weight_decay = 0.0;
    double grad_clip = 5.0;
    int checkpoint_every = 0;  // epochs; 0 disables
};

struct Stage3Config {
    double lr = 5e-5;  // AdamW
    int epochs = 40;
    int batch = 128;
    double weight_decay = 0.0;
    double grad_clip = 5.0;
    SelfMode self_mode = SelfMode::softmatch;
    bool allow_collapse = false;  // gate for self_mode=align_loss
    int checkpoint_every = 0;
};

// Desk-scale augmentation acts on raw input vectors: the weak view is the
// identity (the canonical "original" view), the strong view adds seeded noise
// and a scale jitter. Image-space transforms live behind the encoder gateway.
struct AugmentationPolicy {
    double strong_noise_std = 0.1;
    double strong_scale_jitter = 0.1;
};

struct TrainConfig {
    Stage2Config stage2;
    Stage3Config stage3;
    LossWeights weights;
    AugmentationPolicy augment;
    uint64_t seed = 0;
    CenterStrategy center_strategy = CenterStrategy::weighted;
    BalanceMode balance_mode = BalanceMode::dynamic;
    LoraPlacement placement = LoraPlacement::parallel_qv;
    bool lora_relu = false;
    int lora_rank = 128;
    double balance_momentum = 0.9;
    double conf_momentum = 0.999;
    bool use_bias = true;
    double tau0 = 0.07;
    double tau_hat = 1.0;
    std::string checkpoint_path;  // periodic checkpoints when non-empty
};

// ---- optimizer --------------------------------------------------------------

// Adam; decoupled=true gives AdamW-style weight decay.
class Adam {
  public:
    Adam(double lr, double weight_decay = 0.0, bool decoupled = false, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), decoupled_(decoupled), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.push_back(Matrix::Zero(p->rows(), p->cols()));
                v_.push_back(Matrix::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            Matrix g = grads[i];
            if (wd_ > 0 && !decoupled_) g += wd_ * (*params[i]);
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
            Matrix mhat = m_[i] / bc1;
            Matrix vhat = v_[i] / bc2;
            *params[i] -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
            if (wd_ > 0 && decoupled_) *params[i] -= lr_ * wd_ * (*params[i]);
        }
    }

  private:
    double lr_, wd_;
    bool decoupled_;
    double b1_, b2_, eps_;
    std::vector<Matrix> m_, v_;
    long t_ = 0;
};

inline void clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
    double sq = 0;
    for (const auto& g : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        double s = max_norm / norm;
        for (auto& g : grads) g *= s;
    }
}

// ---- history ---------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double l_ins = 0, l_ass = 0, l_ctr = 0, l_bal = 0, l_total = 0;
    double l_self = 0, mean_w = 0, mu_t = 0, sigma2_t = 0;
    double hist_std = 0;
    double acc = -1;
    double tau = 0;
    Eigen::VectorXd hist;  // normalized prediction histogram (diagnostic, not serialized)
};

inline Eigen::VectorXd normalized_histogram(const std::vector<int>& pred, int K) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(K);
    for (int p : pred) h[p] += 1.0;
    if (!pred.empty()) h /= static_cast<double>(pred.size());
    return h;
}

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_acc = -1;

    void note(const EpochStats& e) {
        epochs.push_back(e);
        if (e.acc > best_acc) {
            best_acc = e.acc;
            best_epoch = e.epoch;
        }
    }
};

inline void write_history_csv(const TrainHistory& h, const std::string& path, bool stage3) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open history csv: " + path);
    if (stage3)
        os << "step,L_self,mean_w,mu_t,sigma2_t,hist_std,acc\n";
    else
        os << "step,L_ins,L_ass,L_ctr,L_bal,L_total,hist_std,acc,tau\n";
    for (const auto& e : h.epochs) {
        if (stage3)
            os << e.epoch << "," << e.l_self << "," << e.mean_w << "," << e.mu_t << "," << e.sigma2_t << ","
               << e.hist_std << "," << e.acc << "\n";
        else
            os << e.epoch << "," << e.l_ins << "," << e.l_ass << "," << e.l_ctr << "," << e.l_bal << "," << e.l_total
               << "," << e.hist_std << "," << e.acc << "," << e.tau << "\n";
    }
}

// ---- prediction --------------------------------------------------------------

inline std::vector<int> predict_clusters(const HeadSet& heads, const Matrix& V) {
    return argmax_labels(assign(heads.c_v, project(heads.g_v, V)));
}

inline std::vector<int> predict_clusters(const HeadSet& heads, const StubVisionEncoder& enc,
                                         const LoraAdapterSet& adapters, const Matrix& X) {
    Matrix E = enc.forward_adapted(X, adapters);
    for (Eigen::Index i = 0; i < E.rows(); ++i) {
        double n = E.row(i).norm();
        if (n <= 1e-12) throw ZeroRowError("predict_clusters: zero encoder output row " + std::to_string(i));
        E.row(i) /= n;
    }
    return predict_clusters(heads, E);
}

// ---- stage 2: alignment over frozen embeddings --------------------------------

namespace detail {

struct HeadNodes {
    int wgv = -1, bgv = -1, wgt = -1, bgt = -1, wcv = -1, bcv = -1, wct = -1, bct = -1, tau = -1;
};

inline std::vector<int> shuffled_indices(Eigen::Index n, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

inline Matrix take_rows(const Matrix& X, const std::vector<int>& idx, size_t lo, size_t hi) {
    Matrix out(static_cast<Eigen::Index>(hi - lo), X.cols());
    for (size_t i = lo; i < hi; ++i) out.row(static_cast<Eigen::Index>(i - lo)) = X.row(idx[i]);
    return out;
}

}  // namespace detail

struct AlignmentResult {
    HeadSet heads;
    TrainHistory history;
    BalanceState balance;
};

inline AlignmentResult run_alignment(const Matrix& V, const Matrix& T, int K, const TrainConfig& cfg,
                                     const std::vector<int>* truth = nullptr) {
    if (V.rows() != T.rows() || V.cols() != T.cols()) throw PreconditionError("run_alignment: V/T shape mismatch");
    if (K < 2) throw PreconditionError("run_alignment: K must be >= 2");
    const int D = static_cast<int>(V.cols());
    AlignmentResult res;
    res.heads = init_heads(D, K, cfg.seed, cfg.use_bias, cfg.tau0, cfg.tau_hat);
    res.balance = BalanceState::uniform(K, cfg.balance_momentum);
    HeadSet& h = res.heads;

    std::vector<Matrix*> params = {&h.g_v.W, &h.g_t.W, &h.c_v.W, &h.c_t.W};
    Matrix bgv(h.g_v.b), bgt(h.g_t.b), bcv(h.c_v.b), bct(h.c_t.b);
    if (cfg.use_bias) {
        params.push_back(&bgv);
        params.push_back(&bgt);
        params.push_back(&bcv);
        params.push_back(&bct);
    }
    Matrix tau_m = ad::Tape::scalar(h.tau);
    params.push_back(&tau_m);
    Adam opt(cfg.stage2.lr, cfg.stage2.weight_decay, false);

    std::mt19937_64 rng(cfg.seed ^ 0x5E1C0002ULL);
    for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
        auto idx = detail::shuffled_indices(V.rows(), rng);
        EpochStats st;
        st.epoch = epoch;
        int n_batches = 0;
        for (size_t lo = 0; lo < idx.size(); lo += static_cast<size_t>(cfg.stage2.batch)) {
            size_t hi = std::min(idx.size(), lo + static_cast<size_t>(cfg.stage2.batch));
            if (hi - lo < 2) break;  // contrastive losses need >= 2 samples
            Matrix Vb = detail::take_rows(V, idx, lo, hi);
            Matrix Tb = detail::take_rows(T, idx, lo, hi);

            ad::Tape t;
            detail::HeadNodes nd;
            nd.wgv = t.var(h.g_v.W);
            nd.wgt = t.var(h.g_t.W);
            nd.wcv = t.var(h.c_v.W);
            nd.wct = t.var(h.c_t.W);
            if (cfg.use_bias) {
                nd.bgv = t.var(bgv);
                nd.bgt = t.var(bgt);
                nd.bcv = t.var(bcv);
                nd.bct = t.var(bct);
            }
            nd.tau = t.var(tau_m);

            int xv = t.cst(Vb), xt = t.cst(Tb);
            int vt = graph::project(t, xv, nd.wgv, nd.bgv);
            int tt = graph::project(t, xt, nd.wgt, nd.bgt);
            int pv = graph::assign(t, vt, nd.wcv, nd.bcv);
            int pt = graph::assign(t, tt, nd.wct, nd.bct);

            int l_ins = graph::instance_loss(t, vt, tt, nd.tau);
            int l_ass = graph::assignment_loss(t, pv, pt, h.tau_hat);
            bool mean_strategy = cfg.center_strategy == CenterStrategy::mean;
            auto cv = graph::cluster_centers(t, pv, vt, mean_strategy);
            auto ct = graph::cluster_centers(t, pt, tt, mean_strategy);
            std::vector<char> shared_mask(cv.mask.size());
            for (size_t k = 0; k < cv.mask.size(); ++k) shared_mask[k] = cv.mask[k] && ct.mask[k];
            int l_ctr = graph::center_loss(t, cv.mu, ct.mu, shared_mask, h.tau_hat);
            int l_bal;
            switch (cfg.balance_mode) {
                case BalanceMode::dynamic: l_bal = graph::balance_loss(t, pv, pt, res.balance.h); break;
                case BalanceMode::entropy: l_bal = graph::entropy_balance_loss(t, pv, pt); break;
                case BalanceMode::off: l_bal = t.cst(0.0); break;
            }
            int total = t.wsum({l_ins, l_ass, l_ctr, l_bal},
                               {cfg.weights.alpha, cfg.weights.beta, cfg.weights.gamma,
                                cfg.balance_mode == BalanceMode::off ? 0.0 : cfg.weights.delta});
            AlignParts parts{t.sval(l_ins), t.sval(l_ass), t.sval(l_ctr), t.sval(l_bal)};
            if (!std::isfinite(t.sval(total)))
                throw NonFiniteLossError("run_alignment: non-finite loss at epoch " + std::to_string(epoch));

            t.backward(total);
            std::vector<int> pnodes = {nd.wgv, nd.wgt, nd.wcv, nd.wct};
            if (cfg.use_bias) {
                pnodes.push_back(nd.bgv);
                pnodes.push_back(nd.bgt);
                pnodes.push_back(nd.bcv);
                pnodes.push_back(nd.bct);
            }
            pnodes.push_back(nd.tau);
            std::vector<Matrix> grads;
            grads.reserve(pnodes.size());
            for (int n : pnodes) grads.push_back(t.grad(n));
            clip_global_norm(grads, cfg.stage2.grad_clip);
            opt.step(params, grads);
            h.tau = tau_m(0, 0);
            h.clamp_tau();
            tau_m(0, 0) = h.tau;

            res.balance = update_balance_state(res.balance, t.val(pv));

            st.l_ins += parts.ins;
            st.l_ass += parts.ass;
            st.l_ctr += parts.ctr;
            st.l_bal += parts.bal;
            st.l_total += t.sval(total);
            ++n_batches;
        }
        if (cfg.use_bias) {
            h.g_v.b = bgv.row(0);
            h.g_t.b = bgt.row(0);
            h.c_v.b = bcv.row(0);
            h.c_t.b = bct.row(0);
        }
        if (n_batches > 0) {
            st.l_ins /= n_batches;
            st.l_ass /= n_batches;
            st.l_ctr /= n_batches;
            st.l_bal /= n_batches;
            st.l_total /= n_batches;
        }
        auto pred = predict_clusters(h, V);
        st.hist_std = histogram_std(pred, K);
        st.hist = normalized_histogram(pred, K);
        if (truth) st.acc = clustering_accuracy(pred, *truth, K);
        st.tau = h.tau;
        res.history.note(st);
        if (cfg.stage2.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (epoch + 1) % cfg.stage2.checkpoint_every == 0) {
            Checkpoint c;
            c.heads = h;
            c.step = epoch + 1;
            save_checkpoint(c, cfg.checkpoint_path);
        }
    }
    return res;
}

// ---- stage 3: self-enhanced fine-tuning ----------------------------------------

struct EnhancementResult {
    LoraAdapterSet adapters;
    HeadSet heads;
    TrainHistory history;
    ConfidenceState confidence;
};

// X holds raw pre-encoder inputs, one per row. static_text is required for
// self_mode=align_loss (the collapse-reproduction mode) and ignored otherwise.
inline EnhancementResult run_self_enhancement(const Matrix& X, const StubVisionEncoder& enc,
                                              const LoraAdapterSet& adapters0, const HeadSet& heads0,
                                              const TrainConfig& cfg, const std::vector<int>* truth = nullptr,
                                              const Matrix* static_text = nullptr) {
    if (cfg.stage3.self_mode == SelfMode::align_loss) {
        if (!cfg.stage3.allow_collapse)
            throw ConfigError(
                "self_mode=align_loss reproduces a known collapse; pass --allow-collapse to run it anyway");
        if (!static_text) throw ConfigError("self_mode=align_loss requires the static text features");
    }
    EnhancementResult res;
    res.adapters = adapters0;
    res.heads = heads0;
    res.confidence = ConfidenceState::init(heads0.K, cfg.conf_momentum);
    HeadSet& h = res.heads;
    LoraAdapterSet& adp = res.adapters;
    const int K = h.K;

    std::vector<Matrix*> params;
    for (auto& p : adp.pairs) {
        params.push_back(&p.A);
        params.push_back(&p.B);
    }
    params.push_back(&h.g_v.W);
    params.push_back(&h.c_v.W);
    Matrix bgv(h.g_v.b), bcv(h.c_v.b);
    if (h.use_bias) {
        params.push_back(&bgv);
        params.push_back(&bcv);
    }
    Matrix tau_m = ad::Tape::scalar(h.tau);
    bool align_mode = cfg.stage3.self_mode == SelfMode::align_loss;
    if (align_mode) params.push_back(&tau_m);
    Adam opt(cfg.stage3.lr, cfg.stage3.weight_decay, true);
    BalanceState bal = BalanceState::uniform(K, cfg.balance_momentum);  // align_loss mode only

    std::mt19937_64 rng(cfg.seed ^ 0x5E1C0003ULL);
    for (int epoch = 0; epoch < cfg.stage3.epochs; ++epoch) {
        auto idx = detail::shuffled_indices(X.rows(), rng);
        EpochStats st;
        st.epoch = epoch;
        int n_batches = 0;
        for (size_t lo = 0; lo < idx.size(); lo += static_cast<size_t>(cfg.stage3.batch)) {
            size_t hi = std::min(idx.size(), lo + static_cast<size_t>(cfg.stage3.batch));
            if (hi - lo < 2) break;
            Matrix Xb = detail::take_rows(X, idx, lo, hi);

            // weak (original) view: deterministic pipeline, gradient-stopped
            Matrix Ew = enc.forward_adapted(Xb, adp);
            for (Eigen::Index i = 0; i < Ew.rows(); ++i) Ew.row(i) /= std::max(Ew.row(i).norm(), 1e-12);
            Matrix Pw = assign(h.c_v, project({h.g_v.W, Eigen::RowVectorXd(bgv.row(0))}, Ew));
            auto pseudo = argmax_labels(Pw);
            Eigen::VectorXd maxp = max_probs(Pw);
            Eigen::VectorXd w = self_training_weights(maxp, res.confidence, cfg.stage3.self_mode);

            // strong view
            std::normal_distribution<double> nd01(0.0, 1.0);
            std::uniform_real_distribution<double> uj(1.0 - cfg.augment.strong_scale_jitter,
                                                      1.0 + cfg.augment.strong_scale_jitter);
            Matrix Xs = Xb;
            for (Eigen::Index i = 0; i < Xs.rows(); ++i) {
                double s = uj(rng);
                for (Eigen::Index j = 0; j < Xs.cols(); ++j)
                    Xs(i, j) = s * Xs(i, j) + cfg.augment.strong_noise_std * nd01(rng);
            }

            ad::Tape t;
            std::vector<std::pair<int, int>> anodes;
            std::vector<int> pnodes;
            for (auto& p : adp.pairs) {
                int na = t.var(p.A), nb = t.var(p.B);
                anodes.emplace_back(na, nb);
                pnodes.push_back(na);
                pnodes.push_back(nb);
            }
            int wgv = t.var(h.g_v.W), wcv = t.var(h.c_v.W);
            pnodes.push_back(wgv);
            pnodes.push_back(wcv);
            int nbgv = -1, nbcv = -1;
            if (h.use_bias) {
                nbgv = t.var(bgv);
                nbcv = t.var(bcv);
                pnodes.push_back(nbgv);
                pnodes.push_back(nbcv);
            }

            int loss;
            if (!align_mode) {
                int xs = t.cst(Xs);
                int e = t.normalize_rows(enc.forward_adapted_graph(t, xs, adp, anodes));
                int vt = graph::project(t, e, wgv, nbgv);
                int q = graph::assign(t, vt, wcv, nbcv);
                loss = graph::self_loss(t, q, pseudo, w);
                st.l_self += t.sval(loss);
                st.mean_w += w.mean();
            } else {
                // collapse-reproduction mode: keep optimizing L_align with the
                // static text features while the augmented image features drift
                int ntau = t.var(tau_m);
                pnodes.push_back(ntau);
                Matrix Tb = detail::take_rows(*static_text, idx, lo, hi);
                int xw = t.cst(Xs);
                int e = t.normalize_rows(enc.forward_adapted_graph(t, xw, adp, anodes));
                int vt = graph::project(t, e, wgv, nbgv);
                int tt = t.cst(project({h.g_t.W, h.g_t.b}, Tb));
                int pv = graph::assign(t, vt, wcv, nbcv);
                int pt = t.cst(assign(h.c_t, t.val(tt)));
                int l_ins = graph::instance_loss(t, vt, tt, ntau);
                int l_ass = graph::assignment_loss(t, pv, pt, h.tau_hat);
                auto cv = graph::cluster_centers(t, pv, vt, cfg.center_strategy == CenterStrategy::mean);
                auto ct = graph::cluster_centers(t, pt, tt, cfg.center_strategy == CenterStrategy::mean);
                std::vector<char> shared(cv.mask.size());
                for (size_t k = 0; k < cv.mask.size(); ++k) shared[k] = cv.mask[k] && ct.mask[k];
                int l_ctr = graph::center_loss(t, cv.mu, ct.mu, shared, h.tau_hat);
                int l_bal = graph::balance_loss(t, pv, pt, bal.h);
                loss = t.wsum({l_ins, l_ass, l_ctr, l_bal},
                              {cfg.weights.alpha, cfg.weights.beta, cfg.weights.gamma, cfg.weights.delta});
                bal = update_balance_state(bal, t.val(pv));
                st.l_self += t.sval(loss);
            }
            if (!std::isfinite(t.sval(loss)))
                throw NonFiniteLossError("run_self_enhancement: non-finite loss at epoch " + std::to_string(epoch));

            t.backward(loss);
            std::vector<Matrix> grads;
            grads.reserve(pnodes.size());
            for (int n : pnodes) grads.push_back(t.grad(n));
            clip_global_norm(grads, cfg.stage3.grad_clip);
            opt.step(params, grads);
            if (align_mode) {
                h.tau = tau_m(0, 0);
                h.clamp_tau();
                tau_m(0, 0) = h.tau;
            }

            res.confidence = update_confidence_state(res.confidence, maxp);
            ++n_batches;
        }
        if (h.use_bias) {
            h.g_v.b = bgv.row(0);
            h.c_v.b = bcv.row(0);
        }
        if (n_batches > 0) {
            st.l_self /= n_batches;
            st.mean_w /= n_batches;
        }
        st.mu_t = res.confidence.mu_t;
        st.sigma2_t = res.confidence.sigma2_t;
        auto pred = predict_clusters(h, enc, res.adapters, X);
        st.hist_std = histogram_std(pred, K);
        st.hist = normalized_histogram(pred, K);
        if (truth) st.acc = clustering_accuracy(pred, *truth, K);
        res.history.note(st);
        if (cfg.stage3.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (epoch + 1) % cfg.stage3.checkpoint_every == 0) {
            Checkpoint c;
            c.heads = h;
            c.adapters = res.adapters;
            c.has_adapters = true;
            c.step = epoch + 1;
            save_checkpoint(c, cfg.checkpoint_path);
        }
    }
    return res;
}

}  // namespace seic
