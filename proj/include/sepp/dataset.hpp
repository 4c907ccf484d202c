#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/rng.hpp"

// Dataset plumbing: image loaders, the synthetic labeled-blob generator used
// by oracle experiments, and the embedding / pair-set file formats.

namespace sepp {

struct ImageRecord {
    std::size_t index = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels; // channel-planar, values in [0,1]
    int label = -1;            // -1 when unlabeled

    std::size_t pixel_count() const { return channels * height * width; }
};

struct EmbeddingMatrix {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> rows; // row-major
    bool normalized = false;

    const float* row(std::size_t i) const { return rows.data() + i * d; }
    float* row(std::size_t i) { return rows.data() + i * d; }
};

struct Pair {
    std::uint32_t anchor = 0;
    std::uint32_t positive = 0;

    friend bool operator==(const Pair& a, const Pair& b) {
        return a.anchor == b.anchor && a.positive == b.positive;
    }
    friend bool operator<(const Pair& a, const Pair& b) {
        return a.anchor != b.anchor ? a.anchor < b.anchor : a.positive < b.positive;
    }
};

struct SemanticPairSet {
    std::vector<Pair> pairs;
    std::size_t source_k = 0;
    double min_threshold = 0.96;
    double max_threshold = 0.99;

    void validate() const {
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(pairs.size() * 2);
        for (const Pair& p : pairs) {
            require(p.anchor != p.positive, "pair set: self pair (", p.anchor, ",",
                    p.positive, ")");
            require(p.anchor < source_k && p.positive < source_k, "pair set: index out of range for k=",
                    source_k, ": (", p.anchor, ",", p.positive, ")");
            const std::uint64_t key = (std::uint64_t(p.anchor) << 32) | p.positive;
            require(seen.insert(key).second, "pair set: duplicate pair (", p.anchor, ",",
                    p.positive, ")");
        }
    }
};

// ---- CIFAR-10 binary batches: 3073-byte records, 1 label + 3072 pixels ----

inline std::vector<ImageRecord> load_cifar_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open ", path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    constexpr std::size_t kRecord = 3073;
    require(bytes.size() % kRecord == 0, path, ": truncated file, unexpected end at byte offset ",
            bytes.size(), " (records are ", kRecord, " bytes)");
    const std::size_t count = bytes.size() / kRecord;
    std::vector<ImageRecord> records;
    records.reserve(count);
    for (std::size_t r = 0; r < count; ++r) {
        const unsigned char* rec = bytes.data() + r * kRecord;
        require(rec[0] <= 9, path, ": label ", int(rec[0]), " out of range at record ", r);
        ImageRecord img;
        img.index = r;
        img.label = rec[0];
        img.channels = 3;
        img.height = 32;
        img.width = 32;
        img.pixels.resize(3072);
        for (std::size_t i = 0; i < 3072; ++i) {
            img.pixels[i] = float(rec[1 + i]) / 255.0f;
        }
        records.push_back(std::move(img));
    }
    return records;
}

// ---- IDX image + label file pair (big-endian headers) ----

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    require(in.gcount() == 4, "truncated input while reading ", what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::string hex_u32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

} // namespace detail

inline std::vector<ImageRecord> load_idx(const std::string& images_path,
                                         const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    require(imgs.good(), "cannot open ", images_path);
    const std::uint32_t img_magic = detail::read_u32_be(imgs, "image magic");
    require(img_magic == 0x00000803u, images_path, ": magic mismatch, got ",
            detail::hex_u32(img_magic), " expected image magic 0x00000803");
    const std::uint32_t count = detail::read_u32_be(imgs, "image count");
    const std::uint32_t rows = detail::read_u32_be(imgs, "row count");
    const std::uint32_t cols = detail::read_u32_be(imgs, "column count");

    std::ifstream labs(labels_path, std::ios::binary);
    require(labs.good(), "cannot open ", labels_path);
    const std::uint32_t lab_magic = detail::read_u32_be(labs, "label magic");
    require(lab_magic == 0x00000801u, labels_path, ": magic mismatch, got ",
            detail::hex_u32(lab_magic), " expected label magic 0x00000801");
    const std::uint32_t lab_count = detail::read_u32_be(labs, "label count");
    require(count == lab_count, "count mismatch: ", count, " images vs ", lab_count,
            " labels");

    std::vector<ImageRecord> records;
    records.reserve(count);
    std::vector<unsigned char> buf(std::size_t(rows) * cols);
    for (std::uint32_t r = 0; r < count; ++r) {
        imgs.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        require(static_cast<std::size_t>(imgs.gcount()) == buf.size(),
                images_path, ": truncated image data at record ", r);
        char label_byte = 0;
        labs.read(&label_byte, 1);
        require(labs.gcount() == 1, labels_path, ": truncated label data at record ", r);
        ImageRecord img;
        img.index = r;
        img.label = static_cast<unsigned char>(label_byte);
        img.channels = 1;
        img.height = rows;
        img.width = cols;
        img.pixels.resize(buf.size());
        for (std::size_t i = 0; i < buf.size(); ++i) {
            img.pixels[i] = float(buf[i]) / 255.0f;
        }
        records.push_back(std::move(img));
    }
    return records;
}

// ---- synthetic labeled blobs ----
//
// Class centroids are signed, permuted basis vectors, so cross-class centroid
// cosines are exactly zero and the feasibility condition is simply
// num_classes <= dim and 2*intra_angle <= pi/2. Each sample tilts its
// centroid by an angle drawn uniformly from [0, intra_angle] toward a random
// tangent direction, then is renormalized. intra_angle = 0 reproduces the
// centroids bit-exactly.

struct BlobDataset {
    std::vector<ImageRecord> records; // pixels = (vector + 1) / 2
    EmbeddingMatrix embeddings;       // the unit vectors themselves
};

inline BlobDataset gen_synthetic_blobs(std::size_t num_classes, std::size_t per_class,
                                       std::size_t dim, double intra_angle,
                                       std::uint64_t seed) {
    require(num_classes >= 2, "blobs: need at least 2 classes");
    require(per_class >= 1, "blobs: need at least 1 sample per class");
    require(num_classes <= dim, "blobs: infeasible geometry, ", num_classes,
            " orthogonal centroids cannot fit in dimension ", dim);
    require(intra_angle >= 0.0 && 2.0 * intra_angle <= std::numbers::pi / 2.0,
            "blobs: infeasible geometry, centroid separation pi/2 cannot reach twice the "
            "intra-class angle ", intra_angle);

    std::vector<std::size_t> axis(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        axis[i] = i;
    }
    rng::shuffle(axis, rng::mix(seed, 0xb10b5));
    rng::Stream sign_stream(rng::mix(seed, 0x51675));

    std::vector<std::vector<float>> centroids(num_classes, std::vector<float>(dim, 0.0f));
    for (std::size_t c = 0; c < num_classes; ++c) {
        centroids[c][axis[c]] = sign_stream.next_u64() & 1 ? -1.0f : 1.0f;
    }

    const std::size_t total = num_classes * per_class;
    BlobDataset out;
    out.embeddings.n = total;
    out.embeddings.d = dim;
    out.embeddings.rows.resize(total * dim);
    out.embeddings.normalized = true;
    out.records.reserve(total);

    std::size_t side = 0;
    while ((side + 1) * (side + 1) <= dim) {
        ++side;
    }
    const bool square = side * side == dim;

    rng::Stream stream(rng::mix(seed, 0xda7a));
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t ordinal = c * per_class + s;
            float* x = out.embeddings.row(ordinal);
            const double theta = intra_angle * stream.next_unit();
            std::vector<double> tangent(dim);
            double norm_sq = 0.0;
            do {
                for (std::size_t i = 0; i < dim; ++i) {
                    tangent[i] = stream.normal();
                }
                // remove the centroid component (one coordinate for basis centroids)
                tangent[axis[c]] = 0.0;
                norm_sq = 0.0;
                for (double v : tangent) {
                    norm_sq += v * v;
                }
            } while (norm_sq == 0.0);
            const double inv_norm = 1.0 / std::sqrt(norm_sq);
            const double cos_t = std::cos(theta);
            const double sin_t = std::sin(theta);
            double len_sq = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double v = cos_t * centroids[c][i] + sin_t * tangent[i] * inv_norm;
                x[i] = static_cast<float>(v);
                len_sq += double(x[i]) * x[i];
            }
            const float inv_len = static_cast<float>(1.0 / std::sqrt(len_sq));
            for (std::size_t i = 0; i < dim; ++i) {
                x[i] *= inv_len;
            }

            ImageRecord img;
            img.index = ordinal;
            img.label = static_cast<int>(c);
            img.channels = 1;
            img.height = square ? side : 1;
            img.width = square ? side : dim;
            img.pixels.resize(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                img.pixels[i] = (x[i] + 1.0f) / 2.0f;
            }
            out.records.push_back(std::move(img));
        }
    }
    return out;
}

// ---- embedding matrix file format ----
// magic "SEPPE1\0", n u64 LE, d u64 LE, row-major f32 LE payload.

inline constexpr char kEmbeddingsMagic[7] = {'S', 'E', 'P', 'P', 'E', '1', '\0'};

inline void write_embeddings(const std::string& path, const EmbeddingMatrix& emb) {
    require(emb.rows.size() == emb.n * emb.d, "embeddings: ", emb.rows.size(),
            " values for ", emb.n, "x", emb.d);
    for (float v : emb.rows) {
        require(std::isfinite(v), "embeddings: non-finite value, refusing to write ", path);
    }
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open ", path, " for writing");
    out.write(kEmbeddingsMagic, sizeof(kEmbeddingsMagic));
    write_u64_le(out, emb.n);
    write_u64_le(out, emb.d);
    write_f32_le(out, emb.rows.data(), emb.rows.size());
    require(out.good(), "write failed for ", path);
}

inline EmbeddingMatrix read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open ", path);
    char magic[sizeof(kEmbeddingsMagic)];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) &&
                std::equal(magic, magic + sizeof(magic), kEmbeddingsMagic),
            path, ": not an embeddings file (bad magic)");
    EmbeddingMatrix emb;
    emb.n = read_u64_le(in, "embedding row count");
    emb.d = read_u64_le(in, "embedding dimension");
    require(emb.d < (1u << 20) && (emb.d == 0 || emb.n < (1ull << 33) / emb.d),
            path, ": implausible header promise of ", emb.n, "x", emb.d);
    emb.rows.resize(emb.n * emb.d);
    read_f32_le(in, emb.rows.data(), emb.rows.size(), "embedding data");
    in.peek();
    require(in.eof(), path, ": file size does not match header promise of ", emb.n, "x",
            emb.d);
    emb.normalized = emb.n > 0;
    for (std::size_t i = 0; i < emb.n && emb.normalized; ++i) {
        double sq = 0.0;
        const float* row = emb.row(i);
        for (std::size_t j = 0; j < emb.d; ++j) {
            sq += double(row[j]) * row[j];
        }
        emb.normalized = std::abs(std::sqrt(sq) - 1.0) <= 1e-5;
    }
    return emb;
}

// ---- pair set CSV ----
// "# k=<K> min=<Min> max=<Max>" comment, "anchor,positive" header, data rows.

inline void write_pairset(const std::string& path, const SemanticPairSet& sps) {
    sps.validate();
    std::ofstream out(path);
    require(out.good(), "cannot open ", path, " for writing");
    char head[128];
    std::snprintf(head, sizeof(head), "# k=%llu min=%.17g max=%.17g\n",
                  static_cast<unsigned long long>(sps.source_k), sps.min_threshold,
                  sps.max_threshold);
    out << head << "anchor,positive\n";
    for (const Pair& p : sps.pairs) {
        out << p.anchor << ',' << p.positive << '\n';
    }
    require(out.good(), "write failed for ", path);
}

inline SemanticPairSet read_pairset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open ", path);
    SemanticPairSet sps;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), path, ": empty pair file");
    unsigned long long k = 0;
    double lo = 0.0, hi = 0.0;
    require(std::sscanf(line.c_str(), "# k=%llu min=%lg max=%lg", &k, &lo, &hi) == 3,
            path, ": malformed metadata line: ", line);
    sps.source_k = k;
    sps.min_threshold = lo;
    sps.max_threshold = hi;
    require(static_cast<bool>(std::getline(in, line)) && line == "anchor,positive",
            path, ": missing anchor,positive header");
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        unsigned long long a = 0, b = 0;
        int consumed = 0;
        require(std::sscanf(line.c_str(), "%llu,%llu%n", &a, &b, &consumed) == 2 &&
                    static_cast<std::size_t>(consumed) == line.size(),
                path, ": malformed pair row at line ", line_no, ": ", line);
        require(a < sps.source_k && b < sps.source_k, path, ": index ", a >= sps.source_k ? a : b,
                " >= k=", sps.source_k, " at line ", line_no);
        sps.pairs.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
    }
    sps.validate();
    return sps;
}

} // namespace sepp
