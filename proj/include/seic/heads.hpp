#pragma once

#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seic/autodiff.hpp"
#include "seic/embedding.hpp"
#include "seic/errors.hpp"

namespace seic {

// y = x * W^T + b, W is out x in
struct AffineMap {
    Matrix W;
    Eigen::RowVectorXd b;
};

struct HeadSet {
    int D = 0;
    int K = 0;
    AffineMap g_v, g_t;  // projection heads, D -> D
    AffineMap c_v, c_t;  // clustering heads, D -> K (softmax applied in assign)
    double tau = 0.07;   // trainable instance temperature, clamped after updates
    double tau_hat = 1.0;
    bool use_bias = true;

    static constexpr double kTauMin = 5e-3;
    static constexpr double kTauMax = 5e-1;

    void clamp_tau() { tau = std::min(kTauMax, std::max(kTauMin, tau)); }
};

namespace detail {

inline Matrix randn(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, std);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
    return m;
}

}  // namespace detail

inline HeadSet init_heads(int D, int K, uint64_t seed, bool use_bias = true, double tau0 = 0.07,
                          double tau_hat = 1.0) {
    if (D < 2 || K < 2) throw PreconditionError("init_heads: D and K must be >= 2");
    std::mt19937_64 rng(seed);
    HeadSet h;
    h.D = D;
    h.K = K;
    h.use_bias = use_bias;
    double ps = 0.02;
    h.g_v = {detail::randn(D, D, ps, rng), Eigen::RowVectorXd::Zero(D)};
    h.g_t = {detail::randn(D, D, ps, rng), Eigen::RowVectorXd::Zero(D)};
    h.c_v = {detail::randn(K, D, ps, rng), Eigen::RowVectorXd::Zero(K)};
    h.c_t = {detail::randn(K, D, ps, rng), Eigen::RowVectorXd::Zero(K)};
    h.tau = tau0;
    h.tau_hat = tau_hat;
    h.clamp_tau();
    return h;
}

// affine map then row unit-normalization
inline Matrix project(const AffineMap& g, const Matrix& X) {
    Matrix Y = X * g.W.transpose();
    Y.rowwise() += g.b;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        double n = Y.row(i).norm();
        if (n <= 1e-12) throw ZeroRowError("project: post-affine row " + std::to_string(i) + " vanished");
        Y.row(i) /= n;
    }
    return Y;
}

// affine map then row softmax (probability-normalizing exponential map)
inline Matrix assign(const AffineMap& c, const Matrix& Xt) {
    Matrix Z = Xt * c.W.transpose();
    Z.rowwise() += c.b;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        double mx = Z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (Z.row(i).array() - mx).exp();
        Z.row(i) = e / e.sum();
    }
    return Z;
}

// argmax with ties broken by lower index
inline int argmax_row(const Matrix& P, Eigen::Index i) {
    int best = 0;
    for (Eigen::Index j = 1; j < P.cols(); ++j)
        if (P(i, j) > P(i, best)) best = static_cast<int>(j);
    return best;
}

inline std::vector<int> argmax_labels(const Matrix& P) {
    std::vector<int> out(static_cast<size_t>(P.rows()));
    for (Eigen::Index i = 0; i < P.rows(); ++i) out[static_cast<size_t>(i)] = argmax_row(P, i);
    return out;
}

// tape builders, used by the trainer
namespace graph {

inline int affine(ad::Tape& t, int x, int w, int b) {
    int y = t.matmul_nt(x, w);
    if (b >= 0) y = t.add_rowvec(y, b);
    return y;
}

inline int project(ad::Tape& t, int x, int w, int b) { return t.normalize_rows(affine(t, x, w, b)); }

inline int assign(ad::Tape& t, int xt, int w, int b) { return t.softmax_rows(affine(t, xt, w, b)); }

}  // namespace graph

// ---- LoRA adapters -----------------------------------------------------------

enum class LoraPlacement { parallel_qv, serial_qv, parallel_ffn, serial_ffn };

inline std::string to_string(LoraPlacement p) {
    switch (p) {
        case LoraPlacement::parallel_qv: return "parallel_qv";
        case LoraPlacement::serial_qv: return "serial_qv";
        case LoraPlacement::parallel_ffn: return "parallel_ffn";
        case LoraPlacement::serial_ffn: return "serial_ffn";
    }
    throw ConfigError("bad LoraPlacement");
}

inline LoraPlacement lora_placement_from_string(const std::string& s) {
    if (s == "parallel_qv") return LoraPlacement::parallel_qv;
    if (s == "serial_qv") return LoraPlacement::serial_qv;
    if (s == "parallel_ffn") return LoraPlacement::parallel_ffn;
    if (s == "serial_ffn") return LoraPlacement::serial_ffn;
    throw ConfigError("unknown LoRA placement: " + s);
}

inline bool lora_is_parallel(LoraPlacement p) {
    return p == LoraPlacement::parallel_qv || p == LoraPlacement::parallel_ffn;
}
inline bool lora_on_qv(LoraPlacement p) {
    return p == LoraPlacement::parallel_qv || p == LoraPlacement::serial_qv;
}

struct LoraPair {
    Matrix A;  // r x D down-map
    Matrix B;  // D x r up-map, zero-initialized
};

struct LoraAdapterSet {
    std::vector<LoraPair> pairs;  // 2 per block for qv placements (Q then V), 1 per block for ffn
    int rank = 128;
    LoraPlacement placement = LoraPlacement::parallel_qv;
    bool use_relu = false;

    size_t param_count() const {
        size_t n = 0;
        for (const auto& p : pairs) n += static_cast<size_t>(p.A.size()) + static_cast<size_t>(p.B.size());
        return n;
    }
};

inline LoraAdapterSet init_adapters(int n_blocks, int D, int rank, LoraPlacement placement, bool use_relu,
                                    uint64_t seed) {
    if (rank < 1 || n_blocks < 1) throw PreconditionError("init_adapters: rank and n_blocks must be >= 1");
    std::mt19937_64 rng(seed);
    LoraAdapterSet s;
    s.rank = rank;
    s.placement = placement;
    s.use_relu = use_relu;
    int per_block = lora_on_qv(placement) ? 2 : 1;
    for (int b = 0; b < n_blocks * per_block; ++b) {
        LoraPair p;
        p.A = detail::randn(rank, D, 1.0 / std::sqrt(static_cast<double>(D)), rng);
        p.B = Matrix::Zero(D, rank);  // adapted model == base model at step 0
        s.pairs.push_back(std::move(p));
    }
    return s;
}

// rows-of-X convention: base output is X * W^T. Parallel adds B*act(A*x),
// serial adds B*act(A*base(x)). Scale fixed at 1.
inline Matrix lora_apply(const Matrix& base_w, const LoraPair& ad, const Matrix& X, bool parallel, bool use_relu) {
    if (base_w.cols() != X.cols() || ad.A.cols() != base_w.cols() || ad.B.rows() != base_w.rows() ||
        ad.B.cols() != ad.A.rows())
        throw ShapeError("lora_apply: incompatible shapes");
    Matrix base = X * base_w.transpose();
    Matrix inner = parallel ? Matrix(X * ad.A.transpose()) : Matrix(base * ad.A.transpose());
    if (use_relu) inner = inner.cwiseMax(0.0);
    return base + inner * ad.B.transpose();
}

namespace graph {

// tape version; base_w constant node, a/b adapter parameter nodes
inline int lora_apply(ad::Tape& t, int base_w, int a, int b, int x, bool parallel, bool use_relu) {
    int base = t.matmul_nt(x, base_w);
    int inner = t.matmul_nt(parallel ? x : base, a);
    if (use_relu) {
        const Matrix& v = t.val(inner);
        Matrix mask = (v.array() > 0.0).cast<double>();
        inner = t.mul_elem_const(inner, mask);
    }
    return t.add(base, t.matmul_nt(inner, b));
}

}  // namespace graph

// ---- checkpoints ---------------------------------------------------------------
// u32 header length, JSON header (shapes, K, D, r, placement, step, block list),
// then raw little-endian float32 parameter blocks in declared order.

struct Checkpoint {
    HeadSet heads;
    LoraAdapterSet adapters;  // empty pairs when stage 2 only
    bool has_adapters = false;
    int step = 0;
};

namespace detail {

inline void write_block(std::ostream& os, const Matrix& m) {
    std::vector<float> buf(static_cast<size_t>(m.size()));
    size_t p = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) buf[p++] = static_cast<float>(m(i, j));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

inline Matrix read_block(std::istream& is, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
    std::vector<float> buf(static_cast<size_t>(rows * cols));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4)))
        throw FormatError("checkpoint: truncated block " + name);
    Matrix m(rows, cols);
    size_t p = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(buf[p++]);
    return m;
}

inline Matrix rowvec_m(const Eigen::RowVectorXd& v) { return Matrix(v); }

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    nlohmann::json hdr;
    hdr["magic"] = "SEICCKPT1";
    hdr["D"] = c.heads.D;
    hdr["K"] = c.heads.K;
    hdr["step"] = c.step;
    hdr["tau"] = c.heads.tau;
    hdr["tau_hat"] = c.heads.tau_hat;
    hdr["use_bias"] = c.heads.use_bias;
    hdr["has_adapters"] = c.has_adapters;
    std::vector<std::pair<std::string, const Matrix*>> blocks;
    std::vector<Matrix> owned;
    owned.reserve(8);
    auto add_affine = [&](const std::string& name, const AffineMap& m) {
        blocks.emplace_back(name + ".W", &m.W);
        owned.push_back(detail::rowvec_m(m.b));
        blocks.emplace_back(name + ".b", &owned.back());
    };
    add_affine("g_v", c.heads.g_v);
    add_affine("g_t", c.heads.g_t);
    add_affine("c_v", c.heads.c_v);
    add_affine("c_t", c.heads.c_t);
    if (c.has_adapters) {
        hdr["r"] = c.adapters.rank;
        hdr["placement"] = to_string(c.adapters.placement);
        hdr["use_relu"] = c.adapters.use_relu;
        for (size_t i = 0; i < c.adapters.pairs.size(); ++i) {
            blocks.emplace_back("lora." + std::to_string(i) + ".A", &c.adapters.pairs[i].A);
            blocks.emplace_back("lora." + std::to_string(i) + ".B", &c.adapters.pairs[i].B);
        }
    }
    nlohmann::json jb = nlohmann::json::array();
    for (auto& [name, m] : blocks)
        jb.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    hdr["blocks"] = jb;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for write: " + path);
    std::string js = hdr.dump();
    detail::put_u32(os, static_cast<uint32_t>(js.size()));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (auto& [name, m] : blocks) detail::write_block(os, *m);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    uint32_t jlen = detail::get_u32(is);
    std::string js(jlen, '\0');
    if (!is.read(js.data(), jlen)) throw FormatError("checkpoint: truncated header");
    nlohmann::json hdr = nlohmann::json::parse(js, nullptr, false);
    if (hdr.is_discarded() || hdr.value("magic", "") != std::string("SEICCKPT1"))
        throw FormatError("checkpoint: bad header in " + path);
    Checkpoint c;
    c.heads.D = hdr.at("D").get<int>();
    c.heads.K = hdr.at("K").get<int>();
    c.step = hdr.value("step", 0);
    c.heads.tau = hdr.at("tau").get<double>();
    c.heads.tau_hat = hdr.at("tau_hat").get<double>();
    c.heads.use_bias = hdr.value("use_bias", true);
    c.has_adapters = hdr.value("has_adapters", false);
    if (c.has_adapters) {
        c.adapters.rank = hdr.at("r").get<int>();
        c.adapters.placement = lora_placement_from_string(hdr.at("placement").get<std::string>());
        c.adapters.use_relu = hdr.value("use_relu", false);
    }
    std::map<std::string, Matrix> loaded;
    for (const auto& jb : hdr.at("blocks")) {
        auto name = jb.at("name").get<std::string>();
        loaded[name] = detail::read_block(is, jb.at("rows").get<Eigen::Index>(), jb.at("cols").get<Eigen::Index>(), name);
    }
    auto get_affine = [&](const std::string& name) {
        AffineMap m;
        m.W = loaded.at(name + ".W");
        m.b = loaded.at(name + ".b").row(0);
        return m;
    };
    c.heads.g_v = get_affine("g_v");
    c.heads.g_t = get_affine("g_t");
    c.heads.c_v = get_affine("c_v");
    c.heads.c_t = get_affine("c_t");
    if (c.has_adapters) {
        for (size_t i = 0;; ++i) {
            auto a = loaded.find("lora." + std::to_string(i) + ".A");
            if (a == loaded.end()) break;
            LoraPair p;
            p.A = a->second;
            p.B = loaded.at("lora." + std::to_string(i) + ".B");
            c.adapters.pairs.push_back(std::move(p));
        }
    }
    return c;
}

}  // namespace seic
