#pragma once

#include <random>
#include <vector>

#include "seic/autodiff.hpp"
#include "seic/embedding.hpp"
#include "seic/heads.hpp"

namespace seic {

// Deterministic small "vision encoder" for desk-scale runs: a stack of
// residual blocks with Q/V mixing maps and an FFN map, all frozen. LoRA
// adapters attach to Q/V or FFN per placement. Near-identity base maps keep
// the input geometry, so stage-2 heads trained on its embeddings stay valid
// when stage 3 starts.
struct StubVisionEncoder {
    int n_blocks = 2;
    int D = 0;
    std::vector<Matrix> Q, V, F;  // D x D per block

    static StubVisionEncoder make(int D, int n_blocks, uint64_t seed, double mix = 0.05) {
        StubVisionEncoder e;
        e.D = D;
        e.n_blocks = n_blocks;
        std::mt19937_64 rng(seed);
        for (int b = 0; b < n_blocks; ++b) {
            e.Q.push_back(detail::randn(D, D, mix / std::sqrt(static_cast<double>(D)), rng));
            e.V.push_back(detail::randn(D, D, mix / std::sqrt(static_cast<double>(D)), rng));
            e.F.push_back(detail::randn(D, D, mix / std::sqrt(static_cast<double>(D)), rng));
        }
        return e;
    }

    // base forward, no adapters
    Matrix forward(const Matrix& X) const {
        Matrix h = X;
        for (int b = 0; b < n_blocks; ++b) {
            Matrix attn = h * Q[static_cast<size_t>(b)].transpose() + h * V[static_cast<size_t>(b)].transpose();
            h = h + attn;
            h = h + h * F[static_cast<size_t>(b)].transpose();
        }
        return h;
    }

    // adapters.pairs layout: qv placements -> (Q_b, V_b) per block; ffn -> one per block
    Matrix forward_adapted(const Matrix& X, const LoraAdapterSet& ad) const {
        bool on_qv = lora_on_qv(ad.placement);
        bool parallel = lora_is_parallel(ad.placement);
        Matrix h = X;
        for (int b = 0; b < n_blocks; ++b) {
            Matrix attn;
            if (on_qv) {
                attn = lora_apply(Q[static_cast<size_t>(b)], ad.pairs[static_cast<size_t>(2 * b)], h, parallel,
                                  ad.use_relu) +
                       lora_apply(V[static_cast<size_t>(b)], ad.pairs[static_cast<size_t>(2 * b + 1)], h, parallel,
                                  ad.use_relu);
            } else {
                attn = h * Q[static_cast<size_t>(b)].transpose() + h * V[static_cast<size_t>(b)].transpose();
            }
            h = h + attn;
            Matrix ffn = on_qv ? Matrix(h * F[static_cast<size_t>(b)].transpose())
                               : lora_apply(F[static_cast<size_t>(b)], ad.pairs[static_cast<size_t>(b)], h, parallel,
                                            ad.use_relu);
            h = h + ffn;
        }
        return h;
    }

    // tape version: base maps are constants, adapter nodes are parameters.
    // adapter_nodes holds (A, B) node pairs in the pairs[] order.
    int forward_adapted_graph(ad::Tape& t, int x, const LoraAdapterSet& ad,
                              const std::vector<std::pair<int, int>>& adapter_nodes) const {
        bool on_qv = lora_on_qv(ad.placement);
        bool parallel = lora_is_parallel(ad.placement);
        int h = x;
        for (int b = 0; b < n_blocks; ++b) {
            int qc = t.cst(Q[static_cast<size_t>(b)]);
            int vc = t.cst(V[static_cast<size_t>(b)]);
            int fc = t.cst(F[static_cast<size_t>(b)]);
            int attn;
            if (on_qv) {
                auto [qa, qb] = adapter_nodes[static_cast<size_t>(2 * b)];
                auto [va, vb] = adapter_nodes[static_cast<size_t>(2 * b + 1)];
                attn = t.add(graph::lora_apply(t, qc, qa, qb, h, parallel, ad.use_relu),
                             graph::lora_apply(t, vc, va, vb, h, parallel, ad.use_relu));
            } else {
                attn = t.add(t.matmul_nt(h, qc), t.matmul_nt(h, vc));
            }
            h = t.add(h, attn);
            int ffn;
            if (on_qv) {
                ffn = t.matmul_nt(h, fc);
            } else {
                auto [fa, fb] = adapter_nodes[static_cast<size_t>(b)];
                ffn = graph::lora_apply(t, fc, fa, fb, h, parallel, ad.use_relu);
            }
            h = t.add(h, ffn);
        }
        return h;
    }

    int adapters_per_model(LoraPlacement placement) const { return lora_on_qv(placement) ? 2 * n_blocks : n_blocks; }
};

// Deterministic text stub: hashes each string into a unit vector. Useful for
// gateway tests without pretrained weights.
inline Matrix hash_encode(const std::vector<std::string>& items, Eigen::Index dim) {
    Matrix out(static_cast<Eigen::Index>(items.size()), dim);
    for (size_t i = 0; i < items.size(); ++i) {
        std::mt19937_64 rng(std::hash<std::string>{}(items[i]));
        std::normal_distribution<double> nd(0.0, 1.0);
        for (Eigen::Index j = 0; j < dim; ++j) out(static_cast<Eigen::Index>(i), j) = nd(rng);
        out.row(static_cast<Eigen::Index>(i)).normalize();
    }
    return out;
}

inline EncoderGateway stub_gateway(Eigen::Index dim, const std::string& name = "stub-hash") {
    EncoderGateway g;
    g.dim = dim;
    g.descriptor = name + "/" + std::to_string(dim);
    g.encode_images = [dim](const std::vector<std::string>& items) { return hash_encode(items, dim); };
    g.encode_texts = [dim](const std::vector<std::string>& items) { return hash_encode(items, dim); };
    return g;
}

}  // namespace seic
