#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/dataset.hpp"
#include "sepp/rng.hpp"

// Semantic positive pair mining: scan pairwise cosine similarities over K
// normalized embeddings and keep pairs inside the [min, max] window. The max
// bound rejects identical images, the min bound rejects merely-related ones.
//
// Every kernel here scores a candidate with the same double-precision dot
// product helper, so the brute-force oracle and the blocked kernel make
// bit-identical threshold decisions.

namespace sepp {

enum class Selection { FirstK, RandomK };

struct MinerConfig {
    std::size_t k = 0;
    double min_threshold = 0.96;
    double max_threshold = 0.99;
    Selection selection = Selection::FirstK;
    std::uint64_t selection_seed = 0;
    bool dedup_symmetric = true; // emit i < j only; false keeps both orientations
    std::size_t block_size = 256;
};

struct MiningReport {
    std::size_t pair_count = 0;
    double wall_time_seconds = 0.0;
    std::size_t k_used = 0;
    // Conceptual size of the similarity matrix the window rule was applied
    // to (k^2), independent of dedup or tiling.
    std::size_t similarity_evaluations = 0;
};

namespace detail {

// Fixed-order widening dot product shared by all mining kernels.
inline double dot_f64(const float* a, const float* b, std::size_t d) {
    double acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
    std::size_t t = 0;
    for (; t + 4 <= d; t += 4) {
        acc0 += double(a[t]) * b[t];
        acc1 += double(a[t + 1]) * b[t + 1];
        acc2 += double(a[t + 2]) * b[t + 2];
        acc3 += double(a[t + 3]) * b[t + 3];
    }
    double tail = 0;
    for (; t < d; ++t) {
        tail += double(a[t]) * b[t];
    }
    return ((acc0 + acc1) + (acc2 + acc3)) + tail;
}

inline void check_miner_config(const MinerConfig& cfg, std::size_t n) {
    require(cfg.min_threshold >= 0.0 && cfg.min_threshold < cfg.max_threshold &&
                cfg.max_threshold <= 1.0,
            "miner: invalid threshold window [", cfg.min_threshold, ", ",
            cfg.max_threshold, "]");
    require(cfg.block_size >= 1, "miner: block_size must be at least 1");
    require(cfg.k <= n, "miner: k=", cfg.k, " exceeds dataset size n=", n);
}

} // namespace detail

/// Rows of the embedding matrix the miner works over, in selection order.
/// First-K is the identity prefix; random-K draws k distinct rows (seeded)
/// and presents them in ascending dataset order.
inline std::vector<std::size_t> selection_indices(const MinerConfig& cfg, std::size_t n) {
    detail::check_miner_config(cfg, n);
    if (cfg.selection == Selection::FirstK) {
        std::vector<std::size_t> idx(cfg.k);
        for (std::size_t i = 0; i < cfg.k; ++i) {
            idx[i] = i;
        }
        return idx;
    }
    std::vector<std::size_t> idx =
        rng::sample_without_replacement(n, cfg.k, cfg.selection_seed);
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace detail {

struct MiningView {
    const float* base = nullptr;
    std::size_t d = 0;
    std::vector<std::size_t> sel; // empty means identity (first-K)

    const float* row(std::size_t i) const {
        return base + (sel.empty() ? i : sel[i]) * d;
    }
};

inline MiningView make_view(const EmbeddingMatrix& emb, const MinerConfig& cfg) {
    check_miner_config(cfg, emb.n);
    MiningView view;
    view.base = emb.rows.data();
    view.d = emb.d;
    if (cfg.selection == Selection::RandomK) {
        view.sel = selection_indices(cfg, emb.n);
    }
    for (std::size_t i = 0; i < cfg.k; ++i) {
        const float* r = view.row(i);
        double sq = 0.0;
        for (std::size_t t = 0; t < emb.d; ++t) {
            sq += double(r[t]) * r[t];
        }
        require(std::abs(std::sqrt(sq) - 1.0) <= 1e-4,
                "miner: unnormalized input, selected row ", i, " has norm ", std::sqrt(sq));
    }
    return view;
}

inline bool in_window(const MinerConfig& cfg, double sim) {
    return sim >= cfg.min_threshold && sim <= cfg.max_threshold;
}

} // namespace detail

/// Reference kernel: the literal double loop over the K x K similarity
/// matrix. Output is sorted by (anchor, positive).
inline SemanticPairSet mine_pairs_bruteforce(const EmbeddingMatrix& emb,
                                             const MinerConfig& cfg) {
    const detail::MiningView view = detail::make_view(emb, cfg);
    SemanticPairSet out;
    out.source_k = cfg.k;
    out.min_threshold = cfg.min_threshold;
    out.max_threshold = cfg.max_threshold;
    for (std::size_t i = 0; i < cfg.k; ++i) {
        const float* a = view.row(i);
        const std::size_t j_begin = cfg.dedup_symmetric ? i + 1 : 0;
        for (std::size_t j = j_begin; j < cfg.k; ++j) {
            if (j == i) {
                continue;
            }
            const double sim = detail::dot_f64(a, view.row(j), view.d);
            if (detail::in_window(cfg, sim)) {
                out.pairs.push_back({static_cast<std::uint32_t>(i),
                                     static_cast<std::uint32_t>(j)});
            }
        }
    }
    return out;
}

/// Production kernel: the same decisions computed tile-by-tile so only
/// block_size-row working sets are live at once; the full K x K matrix is
/// never materialized. Pair order is canonicalized by a final sort, so the
/// result does not depend on tile schedule.
inline std::pair<SemanticPairSet, MiningReport> mine_pairs_blocked(
    const EmbeddingMatrix& emb, const MinerConfig& cfg) {
    Stopwatch timer;
    const detail::MiningView view = detail::make_view(emb, cfg);
    SemanticPairSet out;
    out.source_k = cfg.k;
    out.min_threshold = cfg.min_threshold;
    out.max_threshold = cfg.max_threshold;
    const std::size_t bs = cfg.block_size;
    for (std::size_t bi = 0; bi < cfg.k; bi += bs) {
        const std::size_t i_end = std::min(bi + bs, cfg.k);
        const std::size_t bj_begin = cfg.dedup_symmetric ? bi : 0;
        for (std::size_t bj = bj_begin; bj < cfg.k; bj += bs) {
            const std::size_t j_end = std::min(bj + bs, cfg.k);
            for (std::size_t i = bi; i < i_end; ++i) {
                const float* a = view.row(i);
                std::size_t j = cfg.dedup_symmetric ? std::max(bj, i + 1) : bj;
                for (; j < j_end; ++j) {
                    if (j == i) {
                        continue;
                    }
                    const double sim = detail::dot_f64(a, view.row(j), view.d);
                    if (detail::in_window(cfg, sim)) {
                        out.pairs.push_back({static_cast<std::uint32_t>(i),
                                             static_cast<std::uint32_t>(j)});
                    }
                }
            }
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    MiningReport report;
    report.pair_count = out.pairs.size();
    report.k_used = cfg.k;
    report.similarity_evaluations = cfg.k * cfg.k;
    report.wall_time_seconds = timer.seconds();
    return {std::move(out), report};
}

/// Incremental first-K mining: extend an existing pair set mined at
/// base.source_k to new_k rows by scoring only the L-shaped region of the
/// similarity matrix that involves at least one new row. The result equals a
/// fresh mine at new_k, which is what makes first-K pair sets prefix-nested.
inline std::pair<SemanticPairSet, MiningReport> mine_pairs_extend(
    const EmbeddingMatrix& emb, MinerConfig cfg, const SemanticPairSet& base,
    std::size_t new_k) {
    require(cfg.selection == Selection::FirstK,
            "miner: incremental mining requires first-K selection");
    require(base.source_k <= new_k, "miner: cannot shrink from k=", base.source_k,
            " to k=", new_k);
    require(base.min_threshold == cfg.min_threshold &&
                base.max_threshold == cfg.max_threshold,
            "miner: threshold window differs from the base pair set's");
    cfg.k = new_k;
    Stopwatch timer;
    const detail::MiningView view = detail::make_view(emb, cfg);
    const std::size_t old_k = base.source_k;
    SemanticPairSet out;
    out.source_k = new_k;
    out.min_threshold = cfg.min_threshold;
    out.max_threshold = cfg.max_threshold;
    out.pairs = base.pairs;
    const std::size_t bs = cfg.block_size;
    // Row tiles cover all rows; column tiles are clipped to the new region
    // for old rows and follow the usual rule for new rows.
    for (std::size_t bi = 0; bi < new_k; bi += bs) {
        const std::size_t i_end = std::min(bi + bs, new_k);
        for (std::size_t i = bi; i < i_end; ++i) {
            const float* a = view.row(i);
            std::size_t j_begin;
            if (cfg.dedup_symmetric) {
                j_begin = std::max(i + 1, old_k);
            } else {
                j_begin = i < old_k ? old_k : 0;
            }
            for (std::size_t j = j_begin; j < new_k; ++j) {
                if (j == i) {
                    continue;
                }
                const double sim = detail::dot_f64(a, view.row(j), view.d);
                if (detail::in_window(cfg, sim)) {
                    out.pairs.push_back({static_cast<std::uint32_t>(i),
                                         static_cast<std::uint32_t>(j)});
                }
            }
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    MiningReport report;
    report.pair_count = out.pairs.size();
    report.k_used = new_k;
    report.similarity_evaluations = new_k * new_k - old_k * old_k;
    report.wall_time_seconds = timer.seconds();
    return {std::move(out), report};
}

/// Positives per anchor; anchors with no pairs are omitted.
inline std::map<std::uint32_t, std::size_t> anchor_multiplicity(const SemanticPairSet& sps) {
    std::map<std::uint32_t, std::size_t> hist;
    for (const Pair& p : sps.pairs) {
        ++hist[p.anchor];
    }
    return hist;
}

} // namespace sepp
