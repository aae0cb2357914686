#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

#include "seic/embedding.hpp"
#include "seic/stub_encoder.hpp"

using namespace seic;

namespace {

EmbeddingMatrix random_embeddings(Eigen::Index n, Eigen::Index d, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    EmbeddingMatrix m;
    m.data.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m.data(i, j) = nd(rng);
    m.ids = EmbeddingMatrix::default_ids(n);
    return m;
}

std::string tmp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("normalize_rows basic geometry") {
    EmbeddingMatrix m;
    m.data.resize(2, 2);
    m.data << 3, 4, 1, 0;
    m.ids = {"a", "b"};
    auto n = normalize_rows(m);
    CHECK(n.data(0, 0) == Catch::Approx(0.6));
    CHECK(n.data(0, 1) == Catch::Approx(0.8));
    CHECK(n.data(1, 0) == Catch::Approx(1.0));
    CHECK(n.data(1, 1) == Catch::Approx(0.0));
    CHECK(n.normalized);
}

TEST_CASE("normalize_rows: 100 random rows end up unit norm") {
    auto m = random_embeddings(100, 17, 42);
    auto n = normalize_rows(m);
    for (Eigen::Index i = 0; i < n.rows(); ++i) CHECK(std::abs(n.data.row(i).norm() - 1.0) < 1e-5);
}

TEST_CASE("normalize_rows is idempotent") {
    auto m = random_embeddings(20, 8, 7);
    auto once = normalize_rows(m);
    auto twice = normalize_rows(once);
    CHECK((once.data - twice.data).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("normalize_rows rejects zero rows, naming the id") {
    EmbeddingMatrix m;
    m.data = Matrix::Zero(2, 3);
    m.data(0, 0) = 1.0;
    m.ids = {"ok", "bad-row"};
    CHECK_THROWS_MATCHES(normalize_rows(m), ZeroRowError, Catch::Matchers::MessageMatches(
                                                              Catch::Matchers::ContainsSubstring("bad-row")));
}

TEST_CASE("embedding round-trip: 3x2 identity") {
    EmbeddingMatrix m;
    m.data.resize(3, 2);
    m.data << 1, 2, 3, 4, 5, 6;
    m.ids = {"x", "y", "z"};
    auto path = tmp_file("seic_rt_small.emb");
    write_embeddings(m, path);
    auto r = read_embeddings(path);
    CHECK(r.ids == m.ids);
    CHECK((r.data - m.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embedding round-trip: 1000x512 float32 data is bit-exact") {
    auto m = random_embeddings(1000, 512, 3);
    quantize_f32(m);  // storage precision is float32
    auto path = tmp_file("seic_rt_big.emb");
    write_embeddings(m, path);
    auto r = read_embeddings(path);
    CHECK((r.data - m.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.ids == m.ids);
}

TEST_CASE("corrupted magic raises FormatError") {
    auto m = random_embeddings(3, 2, 5);
    auto path = tmp_file("seic_rt_corrupt.emb");
    write_embeddings(m, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXXXXXX", 8);
    }
    CHECK_THROWS_AS(read_embeddings(path), FormatError);
}

TEST_CASE("truncated payload raises FormatError") {
    auto m = random_embeddings(10, 8, 5);
    auto path = tmp_file("seic_rt_trunc.emb");
    write_embeddings(m, path);
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(read_embeddings(path), FormatError);
}

TEST_CASE("extract_embeddings is invariant to batch partitioning") {
    auto g = stub_gateway(16);
    std::vector<std::string> items = {"cat", "dog", "fish", "bird"};
    auto a = extract_embeddings(g, items, 1);
    auto b = extract_embeddings(g, items, 4);
    CHECK((a.data - b.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.ids == items);
}

TEST_CASE("extract_embeddings rejects empty item lists") {
    auto g = stub_gateway(16);
    CHECK_THROWS_AS(extract_embeddings(g, {}, 2), EncoderError);
}

TEST_CASE("constant-vector encoder yields identical normalized rows") {
    EncoderGateway g;
    g.dim = 4;
    g.descriptor = "const/4";
    g.encode_images = [](const std::vector<std::string>& items) {
        Matrix out(static_cast<Eigen::Index>(items.size()), 4);
        for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) << 2, 2, 2, 2;
        return out;
    };
    auto m = extract_embeddings(g, {"a", "b", "c"}, 2);
    for (Eigen::Index i = 1; i < m.rows(); ++i) CHECK((m.data.row(i) - m.data.row(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(m.data.row(0).norm() - 1.0) < 1e-12);
}

TEST_CASE("encoder failures are wrapped with the batch range") {
    EncoderGateway g;
    g.dim = 4;
    g.encode_images = [](const std::vector<std::string>& items) -> Matrix {
        if (std::find(items.begin(), items.end(), "boom") != items.end()) throw std::runtime_error("backend died");
        return hash_encode(items, 4);
    };
    CHECK_THROWS_MATCHES(extract_embeddings(g, {"a", "b", "boom", "c"}, 2), EncoderError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("[2,4)")));
}
