#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seic/errors.hpp"

namespace seic {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Row-major matrix of feature vectors plus an id manifest.
// Downstream code assumes unit-norm rows; normalize once at this boundary.
struct EmbeddingMatrix {
    Matrix data;
    std::vector<std::string> ids;
    bool normalized = false;

    Eigen::Index rows() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }

    void check() const {
        if (static_cast<Eigen::Index>(ids.size()) != data.rows())
            throw DimMismatchError("EmbeddingMatrix: ids count " + std::to_string(ids.size()) +
                                   " != row count " + std::to_string(data.rows()));
        if (!data.allFinite()) throw NumericError("EmbeddingMatrix: non-finite entries");
    }

    static std::vector<std::string> default_ids(Eigen::Index n) {
        std::vector<std::string> out;
        out.reserve(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) out.push_back(std::to_string(i));
        return out;
    }
};

inline EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
    m.check();
    EmbeddingMatrix out = m;
    for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
        double norm = m.data.row(i).norm();
        if (norm <= 1e-12)
            throw ZeroRowError("normalize_rows: zero row for id '" + m.ids[static_cast<size_t>(i)] + "'");
        out.data.row(i) = m.data.row(i) / norm;
    }
    out.normalized = true;
    return out;
}

// ---- persistence -----------------------------------------------------------
// magic "SEICEMB1", u32 N, u32 D, N*D float32 row-major, u32 json length,
// UTF-8 JSON trailer {"ids":[...]}. All integers little-endian.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("embedding file: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4, "requires 32-bit float");

}  // namespace detail

inline constexpr char kEmbeddingMagic[8] = {'S', 'E', 'I', 'C', 'E', 'M', 'B', '1'};

inline void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    m.check();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(kEmbeddingMagic, 8);
    detail::put_u32(os, static_cast<uint32_t>(m.rows()));
    detail::put_u32(os, static_cast<uint32_t>(m.dim()));
    std::vector<float> buf(static_cast<size_t>(m.rows()) * static_cast<size_t>(m.dim()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.dim(); ++j)
            buf[static_cast<size_t>(i) * static_cast<size_t>(m.dim()) + static_cast<size_t>(j)] =
                static_cast<float>(m.data(i, j));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    nlohmann::json trailer;
    trailer["ids"] = m.ids;
    std::string js = trailer.dump();
    detail::put_u32(os, static_cast<uint32_t>(js.size()));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    if (!os) throw IoError("write failed: " + path);
}

inline EmbeddingMatrix read_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
        throw FormatError("embedding file: bad magic in " + path);
    uint32_t n = detail::get_u32(is);
    uint32_t d = detail::get_u32(is);
    std::vector<float> buf(static_cast<size_t>(n) * static_cast<size_t>(d));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4)))
        throw FormatError("embedding file: truncated payload in " + path);
    uint32_t jlen = detail::get_u32(is);
    std::string js(jlen, '\0');
    if (!is.read(js.data(), jlen)) throw FormatError("embedding file: truncated trailer in " + path);
    nlohmann::json trailer = nlohmann::json::parse(js, nullptr, false);
    if (trailer.is_discarded() || !trailer.contains("ids") || !trailer["ids"].is_array())
        throw FormatError("embedding file: bad trailer JSON in " + path);
    EmbeddingMatrix m;
    m.ids = trailer["ids"].get<std::vector<std::string>>();
    if (m.ids.size() != n)
        throw DimMismatchError("embedding file: manifest count " + std::to_string(m.ids.size()) + " != header N " +
                               std::to_string(n));
    m.data.resize(n, d);
    for (uint32_t i = 0; i < n; ++i)
        for (uint32_t j = 0; j < d; ++j) m.data(i, j) = static_cast<double>(buf[static_cast<size_t>(i) * d + j]);
    return m;
}

// Round-trip bit exactness is only guaranteed for float32-representable data.
inline void quantize_f32(EmbeddingMatrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.dim(); ++j) m.data(i, j) = static_cast<double>(static_cast<float>(m.data(i, j)));
}

// ---- encoder gateway -------------------------------------------------------

// Injected encoder pair; the core never touches model weights directly.
struct EncoderGateway {
    std::function<Matrix(const std::vector<std::string>&)> encode_images;
    std::function<Matrix(const std::vector<std::string>&)> encode_texts;
    std::string descriptor;
    Eigen::Index dim = 0;
};

enum class Modality { image, text };

inline EmbeddingMatrix extract_embeddings(const EncoderGateway& g, const std::vector<std::string>& items,
                                          size_t batch_size, Modality modality = Modality::image) {
    if (items.empty()) throw EncoderError("extract_embeddings: empty item list");
    if (g.dim <= 0) throw EncoderError("extract_embeddings: gateway dim unknown");
    if (batch_size == 0) batch_size = items.size();
    const auto& enc = modality == Modality::image ? g.encode_images : g.encode_texts;
    EmbeddingMatrix m;
    m.data.resize(static_cast<Eigen::Index>(items.size()), g.dim);
    m.ids = items;
    for (size_t start = 0; start < items.size(); start += batch_size) {
        size_t end = std::min(items.size(), start + batch_size);
        std::vector<std::string> batch(items.begin() + static_cast<long>(start), items.begin() + static_cast<long>(end));
        Matrix out;
        try {
            out = enc(batch);
        } catch (const std::exception& e) {
            throw EncoderError("encoder failed on batch [" + std::to_string(start) + "," + std::to_string(end) +
                               "): " + e.what());
        }
        if (out.rows() != static_cast<Eigen::Index>(batch.size()) || out.cols() != g.dim)
            throw EncoderError("encoder returned wrong shape for batch [" + std::to_string(start) + "," +
                               std::to_string(end) + ")");
        m.data.middleRows(static_cast<Eigen::Index>(start), out.rows()) = out;
    }
    return normalize_rows(m);
}

}  // namespace seic
