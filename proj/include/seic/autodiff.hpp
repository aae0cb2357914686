#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "seic/embedding.hpp"
#include "seic/errors.hpp"

namespace seic::ad {

// Minimal reverse-mode tape over dense double matrices. Scalars are 1x1.
// Nodes are created in topological order; backward() walks them in reverse.
class Tape {
  public:
    struct Node {
        Matrix val;
        Matrix grad;
        std::function<void(Tape&)> back;
        bool requires_grad = false;
    };

    int var(const Matrix& v) {
        nodes_.push_back({v, Matrix::Zero(v.rows(), v.cols()), nullptr, true});
        return static_cast<int>(nodes_.size()) - 1;
    }
    int var(double s) { return var(scalar(s)); }
    int cst(const Matrix& v) {
        nodes_.push_back({v, Matrix(), nullptr, false});
        return static_cast<int>(nodes_.size()) - 1;
    }
    int cst(double s) { return cst(scalar(s)); }

    const Matrix& val(int i) const { return nodes_[static_cast<size_t>(i)].val; }
    const Matrix& grad(int i) const { return nodes_[static_cast<size_t>(i)].grad; }
    double sval(int i) const { return nodes_[static_cast<size_t>(i)].val(0, 0); }

    static Matrix scalar(double s) {
        Matrix m(1, 1);
        m(0, 0) = s;
        return m;
    }

    // y = A * B
    int matmul(int a, int b) {
        return emit(val(a) * val(b), {a, b}, [a, b](Tape& t) {
            const Matrix& g = t.g();
            t.acc(a, g * t.val(b).transpose());
            t.acc(b, t.val(a).transpose() * g);
        });
    }
    // y = A * B^T
    int matmul_nt(int a, int b) {
        return emit(val(a) * val(b).transpose(), {a, b}, [a, b](Tape& t) {
            const Matrix& g = t.g();
            t.acc(a, g * t.val(b));
            t.acc(b, g.transpose() * t.val(a));
        });
    }
    // y = A^T * B
    int matmul_tn(int a, int b) {
        return emit(val(a).transpose() * val(b), {a, b}, [a, b](Tape& t) {
            const Matrix& g = t.g();
            t.acc(a, t.val(b) * g.transpose());
            t.acc(b, t.val(a) * g);
        });
    }

    int add(int a, int b) {
        return emit(val(a) + val(b), {a, b}, [a, b](Tape& t) {
            t.acc(a, t.g());
            t.acc(b, t.g());
        });
    }

    // broadcast a 1xD row vector across all rows of A
    int add_rowvec(int a, int r) {
        Matrix v = val(a);
        v.rowwise() += Eigen::RowVectorXd(val(r).row(0));
        return emit(std::move(v), {a, r}, [a, r](Tape& t) {
            t.acc(a, t.g());
            t.acc(r, t.g().colwise().sum());
        });
    }

    int scale(int a, double c) {
        return emit(val(a) * c, {a}, [a, c](Tape& t) { t.acc(a, t.g() * c); });
    }

    int transpose(int a) {
        return emit(val(a).transpose(), {a}, [a](Tape& t) { t.acc(a, t.g().transpose()); });
    }

    int mul_elem_const(int a, const Matrix& c) {
        return emit(val(a).cwiseProduct(c), {a}, [a, c](Tape& t) { t.acc(a, t.g().cwiseProduct(c)); });
    }

    // y = A / s where s is a trainable 1x1 node
    int div_scalar_node(int a, int s) {
        double sv = sval(s);
        return emit(val(a) / sv, {a, s}, [a, s, sv](Tape& t) {
            const Matrix& g = t.g();
            t.acc(a, g / sv);
            Matrix gs(1, 1);
            gs(0, 0) = -(g.cwiseProduct(t.val(a))).sum() / (sv * sv);
            t.acc(s, gs);
        });
    }

    // rows with row_mask=false become zero (no grad path); others L2-normalized
    int normalize_rows(int a, const std::vector<char>& row_mask = {}) {
        Matrix x = val(a);
        Matrix y = Matrix::Zero(x.rows(), x.cols());
        std::vector<double> norms(static_cast<size_t>(x.rows()), 0.0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (!row_mask.empty() && !row_mask[static_cast<size_t>(i)]) continue;
            double n = x.row(i).norm();
            if (n <= 1e-12) throw ZeroRowError("autodiff normalize_rows: zero row " + std::to_string(i));
            norms[static_cast<size_t>(i)] = n;
            y.row(i) = x.row(i) / n;
        }
        return emit(std::move(y), {a}, [a, norms, row_mask](Tape& t) {
            const Matrix& g = t.g();
            const Matrix& y = t.g_val();
            Matrix gx = Matrix::Zero(g.rows(), g.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                if (!row_mask.empty() && !row_mask[static_cast<size_t>(i)]) continue;
                double dot = g.row(i).dot(y.row(i));
                gx.row(i) = (g.row(i) - dot * y.row(i)) / norms[static_cast<size_t>(i)];
            }
            t.acc(a, gx);
        });
    }

    int softmax_rows(int a) {
        Matrix x = val(a);
        Matrix y(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double mx = x.row(i).maxCoeff();
            Eigen::RowVectorXd e = (x.row(i).array() - mx).exp();
            y.row(i) = e / e.sum();
        }
        return emit(std::move(y), {a}, [a](Tape& t) {
            const Matrix& g = t.g();
            const Matrix& y = t.g_val();
            Matrix gx(g.rows(), g.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                double dot = g.row(i).dot(y.row(i));
                gx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
            }
            t.acc(a, gx);
        });
    }

    // InfoNCE with the diagonal as positives: -(1/n) sum_i log softmax(S_i)_i
    int nce_diag(int s) {
        const Matrix& S = val(s);
        Matrix P(S.rows(), S.cols());
        double loss = 0;
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            double mx = S.row(i).maxCoeff();
            Eigen::RowVectorXd e = (S.row(i).array() - mx).exp();
            double z = e.sum();
            P.row(i) = e / z;
            loss -= (S(i, i) - mx - std::log(z));
        }
        loss /= static_cast<double>(S.rows());
        return emit(scalar(loss), {s}, [s, P](Tape& t) {
            double up = t.g()(0, 0);
            Matrix gs = P;
            gs.diagonal().array() -= 1.0;
            t.acc(s, gs * (up / static_cast<double>(P.rows())));
        });
    }

    // column means as a 1xK row
    int colmean(int a) {
        const Matrix& x = val(a);
        Matrix m = x.colwise().mean();
        Eigen::Index b = x.rows();
        return emit(std::move(m), {a}, [a, b](Tape& t) {
            Matrix gx = t.g().replicate(b, 1) / static_cast<double>(b);
            t.acc(a, gx);
        });
    }

    // x*log(x) elementwise with 0*log0 := 0; entries below clamp contribute 0
    int xlogx(int a, double clamp = 1e-8) {
        const Matrix& x = val(a);
        Matrix y(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                y(i, j) = x(i, j) < clamp ? 0.0 : x(i, j) * std::log(x(i, j));
        return emit(std::move(y), {a}, [a, clamp](Tape& t) {
            const Matrix& x = t.val(a);
            const Matrix& g = t.g();
            Matrix gx(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                for (Eigen::Index j = 0; j < x.cols(); ++j)
                    gx(i, j) = x(i, j) < clamp ? 0.0 : g(i, j) * (std::log(x(i, j)) + 1.0);
            t.acc(a, gx);
        });
    }

    // divide each column j by the constant h_j
    int div_const_rowvec(int a, const Eigen::RowVectorXd& h) {
        Matrix y = val(a);
        for (Eigen::Index j = 0; j < y.cols(); ++j) y.col(j) /= h[j];
        return emit(std::move(y), {a}, [a, h](Tape& t) {
            Matrix gx = t.g();
            for (Eigen::Index j = 0; j < gx.cols(); ++j) gx.col(j) /= h[j];
            t.acc(a, gx);
        });
    }

    int sum(int a) {
        return emit(scalar(val(a).sum()), {a}, [a](Tape& t) {
            double up = t.g()(0, 0);
            t.acc(a, Matrix::Constant(t.val(a).rows(), t.val(a).cols(), up));
        });
    }

    int wsum(const std::vector<int>& terms, const std::vector<double>& w) {
        double v = 0;
        for (size_t i = 0; i < terms.size(); ++i) v += w[i] * sval(terms[i]);
        return emit(scalar(v), terms, [terms, w](Tape& t) {
            double up = t.g()(0, 0);
            for (size_t i = 0; i < terms.size(); ++i) t.acc(terms[i], scalar(up * w[i]));
        });
    }

    // Per-cluster weight renormalization for probability-weighted centers.
    // mask(i,k) = 1 iff argmax(p_i)=k. Output W'_ik = p_ik*mask_ik / sum_l p_lk*mask_lk;
    // columns whose mask is empty stay zero.
    int cluster_weights(int p, const Matrix& mask) {
        const Matrix& P = val(p);
        Matrix W = P.cwiseProduct(mask);
        Eigen::RowVectorXd s = W.colwise().sum();
        Matrix Wn = Matrix::Zero(W.rows(), W.cols());
        for (Eigen::Index k = 0; k < W.cols(); ++k)
            if (s[k] > 0) Wn.col(k) = W.col(k) / s[k];
        return emit(std::move(Wn), {p}, [p, mask, s](Tape& t) {
            const Matrix& g = t.g();
            const Matrix& Wn = t.g_val();
            Matrix gp = Matrix::Zero(g.rows(), g.cols());
            for (Eigen::Index k = 0; k < g.cols(); ++k) {
                if (s[k] <= 0) continue;
                double dot = g.col(k).dot(Wn.col(k));
                for (Eigen::Index i = 0; i < g.rows(); ++i)
                    if (mask(i, k) != 0) gp(i, k) = (g(i, k) - dot) / s[k];
            }
            t.acc(p, gp);
        });
    }

    int gather_rows(int a, const std::vector<int>& idx) {
        const Matrix& x = val(a);
        Matrix y(static_cast<Eigen::Index>(idx.size()), x.cols());
        for (size_t i = 0; i < idx.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
        return emit(std::move(y), {a}, [a, idx](Tape& t) {
            const Matrix& g = t.g();
            Matrix gx = Matrix::Zero(t.val(a).rows(), t.val(a).cols());
            for (size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
            t.acc(a, gx);
        });
    }

    // -(1/B) sum_i w_i * log P(i, labels_i); w and labels are constants
    int ce_pick(int p, const std::vector<int>& labels, const Eigen::VectorXd& w, double eps = 1e-12) {
        const Matrix& P = val(p);
        const double B = static_cast<double>(P.rows());
        double loss = 0;
        for (Eigen::Index i = 0; i < P.rows(); ++i)
            loss -= w[i] * std::log(std::max(P(i, labels[static_cast<size_t>(i)]), eps));
        loss /= B;
        return emit(scalar(loss), {p}, [p, labels, w, eps, B](Tape& t) {
            double up = t.g()(0, 0);
            const Matrix& P = t.val(p);
            Matrix gp = Matrix::Zero(P.rows(), P.cols());
            for (Eigen::Index i = 0; i < P.rows(); ++i) {
                double pi = P(i, labels[static_cast<size_t>(i)]);
                if (pi > eps) gp(i, labels[static_cast<size_t>(i)]) = -up * w[i] / (B * pi);
            }
            t.acc(p, gp);
        });
    }

    void backward(int root) {
        if (val(root).rows() != 1 || val(root).cols() != 1)
            throw ShapeError("backward: root must be scalar");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad.setZero();
        nodes_[static_cast<size_t>(root)].grad = scalar(1.0);
        for (int i = root; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (!n.requires_grad || !n.back) continue;
            if (n.grad.size() == 0) continue;
            cur_ = i;
            n.back(*this);
        }
    }

    // helpers used by backward lambdas
    const Matrix& g() const { return nodes_[static_cast<size_t>(cur_)].grad; }
    const Matrix& g_val() const { return nodes_[static_cast<size_t>(cur_)].val; }
    void acc(int i, const Matrix& g) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (!n.requires_grad) return;
        n.grad += g;
    }

  private:
    int emit(Matrix v, const std::vector<int>& parents, std::function<void(Tape&)> back) {
        bool any = false;
        for (int p : parents) any = any || nodes_[static_cast<size_t>(p)].requires_grad;
        Node n;
        n.val = std::move(v);
        n.requires_grad = any;
        if (any) {
            n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
            n.back = std::move(back);
        }
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    int cur_ = -1;
};

}  // namespace seic::ad
