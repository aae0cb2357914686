#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "seic/synth.hpp"
#include "seic/trainer.hpp"

using namespace seic;

namespace {

std::string tmp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

TrainConfig small_cfg(uint64_t seed, int epochs2 = 40) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.stage2.epochs = epochs2;
    cfg.stage2.batch = 64;
    cfg.stage3.epochs = 5;
    cfg.stage3.batch = 64;
    cfg.stage3.lr = 1e-4;
    return cfg;
}

}  // namespace

TEST_CASE("Adam converges on a quadratic") {
    Matrix x = Matrix::Constant(3, 2, 5.0);
    Matrix target(3, 2);
    target << 1, -2, 0.5, 3, -1, 2;
    Adam opt(0.1);
    std::vector<Matrix*> params = {&x};
    for (int it = 0; it < 500; ++it) {
        std::vector<Matrix> grads = {2.0 * (x - target)};
        opt.step(params, grads);
    }
    CHECK((x - target).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("AdamW decoupled decay shrinks parameters with zero gradient") {
    Matrix x = Matrix::Constant(2, 2, 1.0);
    Adam opt(0.1, 0.5, /*decoupled=*/true);
    std::vector<Matrix*> params = {&x};
    std::vector<Matrix> grads = {Matrix::Zero(2, 2)};
    opt.step(params, grads);
    CHECK(x(0, 0) == Catch::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("clip_global_norm rescales only above the threshold") {
    std::vector<Matrix> g = {Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 4.0)};  // norm 5
    clip_global_norm(g, 10.0);
    CHECK(g[0](0, 0) == 3.0);
    clip_global_norm(g, 1.0);
    CHECK(std::sqrt(g[0](0, 0) * g[0](0, 0) + g[1](0, 0) * g[1](0, 0)) == Catch::Approx(1.0));
}

TEST_CASE("alignment on a separated mixture recovers the clusters") {
    SynthConfig sc;
    sc.N = 300;
    sc.D = 16;
    sc.K = 3;
    sc.separation_deg = 70;
    sc.noise_std = 0.12;
    sc.seed = 1;
    auto data = make_synthetic_mixture(sc);
    auto cfg = small_cfg(2);
    auto res = run_alignment(data.embeddings.data, data.embeddings.data, sc.K, cfg, &data.labels);
    REQUIRE(res.history.epochs.size() == static_cast<size_t>(cfg.stage2.epochs));
    const auto& last = res.history.epochs.back();
    CHECK(std::isfinite(last.l_total));
    CHECK(last.acc > 0.8);
    CHECK(last.acc >= res.history.epochs.front().acc);
    CHECK(res.heads.tau >= HeadSet::kTauMin);
    CHECK(res.heads.tau <= HeadSet::kTauMax);
    CHECK(std::abs(res.balance.h.sum() - 1.0) < 1e-9);
}

TEST_CASE("alignment is deterministic for a fixed seed") {
    SynthConfig sc;
    sc.N = 120;
    sc.D = 8;
    sc.K = 2;
    sc.seed = 3;
    auto data = make_synthetic_mixture(sc);
    auto cfg = small_cfg(5);
    auto a = run_alignment(data.embeddings.data, data.embeddings.data, sc.K, cfg);
    auto b = run_alignment(data.embeddings.data, data.embeddings.data, sc.K, cfg);
    CHECK((a.heads.g_v.W - b.heads.g_v.W).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.heads.tau == b.heads.tau);
}

TEST_CASE("alignment writes periodic checkpoints when asked") {
    SynthConfig sc;
    sc.N = 80;
    sc.D = 8;
    sc.K = 2;
    sc.seed = 4;
    auto data = make_synthetic_mixture(sc);
    auto cfg = small_cfg(4, 4);
    cfg.stage2.checkpoint_every = 2;
    cfg.checkpoint_path = tmp_file("seic_trainer_ckpt.ckpt");
    std::filesystem::remove(cfg.checkpoint_path);
    auto res = run_alignment(data.embeddings.data, data.embeddings.data, sc.K, cfg);
    REQUIRE(std::filesystem::exists(cfg.checkpoint_path));
    auto c = load_checkpoint(cfg.checkpoint_path);
    CHECK(c.step == 4);
    auto pred_mem = predict_clusters(res.heads, data.embeddings.data);
    auto pred_ckpt = predict_clusters(c.heads, data.embeddings.data);
    // float32 checkpoint quantization may flip near-ties; labels must agree almost everywhere
    size_t agree = 0;
    for (size_t i = 0; i < pred_mem.size(); ++i) agree += pred_mem[i] == pred_ckpt[i];
    CHECK(agree == pred_mem.size());
}

TEST_CASE("history csv round-trips the epoch count and header") {
    TrainHistory h;
    for (int e = 0; e < 3; ++e) {
        EpochStats st;
        st.epoch = e;
        st.l_total = 1.0 / (e + 1);
        h.note(st);
    }
    auto path = tmp_file("seic_hist.csv");
    write_history_csv(h, path, /*stage3=*/false);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "step,L_ins,L_ass,L_ctr,L_bal,L_total,hist_std,acc,tau");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("self-enhancement preserves or improves the stage-2 clustering") {
    SynthConfig sc;
    sc.N = 240;
    sc.D = 12;
    sc.K = 3;
    sc.separation_deg = 70;
    sc.noise_std = 0.12;
    sc.seed = 5;
    auto data = make_synthetic_mixture(sc);
    auto enc = StubVisionEncoder::make(sc.D, 2, 6);

    // stage 2 on the frozen base-encoder embeddings
    Matrix E = enc.forward(data.embeddings.data);
    for (Eigen::Index i = 0; i < E.rows(); ++i) E.row(i).normalize();
    auto cfg = small_cfg(7);
    auto s2 = run_alignment(E, E, sc.K, cfg, &data.labels);
    double acc2 = s2.history.epochs.back().acc;

    auto adapters = init_adapters(enc.n_blocks, sc.D, 4, cfg.placement, cfg.lora_relu, 8);
    auto s3 = run_self_enhancement(data.embeddings.data, enc, adapters, s2.heads, cfg, &data.labels);
    REQUIRE(s3.history.epochs.size() == static_cast<size_t>(cfg.stage3.epochs));
    double acc3 = s3.history.epochs.back().acc;
    CHECK(acc3 >= acc2 - 0.05);
    CHECK(std::isfinite(s3.history.epochs.back().l_self));
    CHECK(s3.confidence.mu_t > 0.0);
    CHECK(s3.confidence.sigma2_t >= s3.confidence.sigma2_floor);
    // text branch must be untouched
    CHECK((s3.heads.g_t.W - s2.heads.g_t.W).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s3.heads.c_t.W - s2.heads.c_t.W).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fixmatch mode runs and records mean weights") {
    SynthConfig sc;
    sc.N = 120;
    sc.D = 8;
    sc.K = 2;
    sc.seed = 9;
    auto data = make_synthetic_mixture(sc);
    auto enc = StubVisionEncoder::make(sc.D, 2, 10);
    Matrix E = enc.forward(data.embeddings.data);
    for (Eigen::Index i = 0; i < E.rows(); ++i) E.row(i).normalize();
    auto cfg = small_cfg(11, 10);
    cfg.stage3.self_mode = SelfMode::fixmatch;
    cfg.stage3.epochs = 3;
    auto s2 = run_alignment(E, E, sc.K, cfg);
    auto adapters = init_adapters(enc.n_blocks, sc.D, 4, cfg.placement, cfg.lora_relu, 12);
    auto s3 = run_self_enhancement(data.embeddings.data, enc, adapters, s2.heads, cfg, &data.labels);
    for (const auto& e : s3.history.epochs) {
        CHECK(e.mean_w >= 0.0);
        CHECK(e.mean_w <= 1.0);
    }
}

TEST_CASE("align_loss self mode is gated behind allow_collapse") {
    SynthConfig sc;
    sc.N = 60;
    sc.D = 8;
    sc.K = 2;
    sc.seed = 13;
    auto data = make_synthetic_mixture(sc);
    auto enc = StubVisionEncoder::make(sc.D, 2, 14);
    auto cfg = small_cfg(15, 2);
    cfg.stage3.self_mode = SelfMode::align_loss;
    cfg.stage3.epochs = 1;
    auto heads = init_heads(sc.D, sc.K, 16);
    auto adapters = init_adapters(enc.n_blocks, sc.D, 2, cfg.placement, cfg.lora_relu, 17);
    CHECK_THROWS_AS(
        run_self_enhancement(data.embeddings.data, enc, adapters, heads, cfg, nullptr, &data.embeddings.data),
        ConfigError);
    cfg.stage3.allow_collapse = true;
    CHECK_THROWS_AS(run_self_enhancement(data.embeddings.data, enc, adapters, heads, cfg, nullptr, nullptr),
                    ConfigError);
    auto res = run_self_enhancement(data.embeddings.data, enc, adapters, heads, cfg, nullptr, &data.embeddings.data);
    CHECK(res.history.epochs.size() == 1);
}
