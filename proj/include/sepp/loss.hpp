#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/tensor.hpp"

// Contrastive objectives: the classic normalized-temperature cross entropy
// over instance view pairs, plus a weighted extension that attaches extra
// mined positives to each anchor. All losses are graph ops, so gradients flow
// to every projection row.

namespace sepp {

enum class LambdaMode { Constant, Off };
enum class NegativeRule { AllOtherViews, SelfInclusive2N };

struct LossConfig {
    double temperature = 0.1;
    LambdaMode lambda_mode = LambdaMode::Constant;
    double lambda_value = 1.0;
    bool exclude_semantic_from_negatives = true;
    NegativeRule negative_rule = NegativeRule::AllOtherViews;
    bool symmetric = true;

    void validate() const {
        require(temperature > 0.0, "loss: temperature must be positive, got ", temperature);
        require(lambda_value >= 0.0 && lambda_value <= 1.0,
                "loss: lambda must lie in [0,1], got ", lambda_value);
    }
};

/// One training batch: 2N instance views (rows i and i+N are the two views of
/// instance i), plus M extra semantic-positive views attached to anchors
/// through `semantic`.
template <typename Real>
struct TrainBatch {
    Tensor<Real> z; // [2N, D]
    Tensor<Real> u; // [M, D]; leave undefined when there are no pairs

    struct SemanticRef {
        std::size_t anchor;  // instance index in [0, N)
        std::size_t u_index; // row of u
        double weight = 1.0; // per-pair multiplier on top of the configured lambda
    };
    std::vector<SemanticRef> semantic;
    std::size_t n = 0;

    std::size_t u_rows() const { return u.defined() ? u.shape()[0] : 0; }

    void validate() const {
        require(z.defined() && z.shape().size() == 2, "batch: z must be a matrix");
        require(n >= 1 && z.shape()[0] == 2 * n, "batch: z has ", z.shape()[0],
                " rows, expected 2N = ", 2 * n);
        const std::size_t m = u_rows();
        if (m > 0) {
            require(u.shape().size() == 2 && u.shape()[1] == z.shape()[1],
                    "batch: u shape ", shape_str(u.shape()), " incompatible with z ",
                    shape_str(z.shape()));
        }
        std::vector<bool> referenced(m, false);
        for (const SemanticRef& ref : semantic) {
            require(ref.anchor < n, "batch: semantic anchor ", ref.anchor,
                    " out of range for N = ", n);
            require(ref.u_index < m, "batch: semantic positive index ", ref.u_index,
                    " out of range for ", m, " u rows");
            require(ref.weight >= 0.0, "batch: negative semantic weight");
            referenced[ref.u_index] = true;
        }
        for (std::size_t i = 0; i < m; ++i) {
            require(referenced[i], "batch: u row ", i, " is referenced by no anchor");
        }
    }
};

namespace detail {

template <typename Real>
void check_rows_normalized(const Tensor<Real>& t, const char* where) {
    const std::size_t rows = t.shape()[0];
    const std::size_t cols = t.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
        double norm = 0.0;
        const Real* p = t.values().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            norm += double(p[c]) * double(p[c]);
        }
        norm = std::sqrt(norm);
        require(std::abs(norm - 1.0) <= 1e-4, where, ": unnormalized rows (row ", r,
                " has norm ", norm, ")");
    }
}

/// -log( exp(S[a,pos]) / sum_{c in denom} exp(S[a,c]) ) over a pre-scaled
/// similarity matrix; `denom` must already contain the positive column (and
/// may list a column twice when the caller wants it counted twice).
template <typename Real>
Tensor<Real> softmax_ce_term(const Tensor<Real>& scaled_sim, std::size_t anchor,
                             std::size_t positive, std::vector<std::size_t> denom) {
    return sub(row_lse_subset(scaled_sim, anchor, std::move(denom)),
               select_entry(scaled_sim, anchor, positive));
}

} // namespace detail

/// Pairwise instance-discrimination term: anchor row i, positive row j, the
/// denominator running over every row except the anchor itself.
template <typename Real>
Tensor<Real> ntxent_pair_loss(const Tensor<Real>& z, std::size_t i, std::size_t j,
                              double tau) {
    require(tau > 0.0, "ntxent: temperature must be positive, got ", tau);
    require(z.defined() && z.shape().size() == 2, "ntxent: z must be a matrix");
    const std::size_t rows = z.shape()[0];
    require(i < rows && j < rows, "ntxent: indices (", i, ",", j, ") out of range for ",
            rows, " rows");
    require(i != j, "ntxent: anchor and positive must differ, both are ", i);
    detail::check_rows_normalized(z, "ntxent");
    Tensor<Real> scaled = scalar_mul(matmul_nt(z, z), Real(1.0 / tau));
    std::vector<std::size_t> denom;
    denom.reserve(rows - 1);
    for (std::size_t k = 0; k < rows; ++k) {
        if (k != i) {
            denom.push_back(k);
        }
    }
    return detail::softmax_ce_term(scaled, i, j, std::move(denom));
}

/// Mined-positive term over an explicit negative list: the denominator is the
/// positive plus the given negatives, nothing else.
template <typename Real>
Tensor<Real> sepp_pair_loss(const Tensor<Real>& rows, std::size_t anchor,
                            std::size_t positive, const std::vector<std::size_t>& negatives,
                            double tau) {
    require(tau > 0.0, "pair loss: temperature must be positive, got ", tau);
    require(rows.defined() && rows.shape().size() == 2, "pair loss: rows must be a matrix");
    const std::size_t count = rows.shape()[0];
    require(anchor < count && positive < count, "pair loss: indices out of range");
    require(anchor != positive, "pair loss: anchor and positive must differ");
    for (std::size_t k : negatives) {
        require(k < count, "pair loss: negative index ", k, " out of range");
        require(k != anchor && k != positive,
                "pair loss: negatives must exclude the anchor and positive rows");
    }
    detail::check_rows_normalized(rows, "pair loss");
    Tensor<Real> scaled = scalar_mul(matmul_nt(rows, rows), Real(1.0 / tau));
    std::vector<std::size_t> denom;
    denom.reserve(negatives.size() + 1);
    denom.push_back(positive);
    denom.insert(denom.end(), negatives.begin(), negatives.end());
    return detail::softmax_ce_term(scaled, anchor, positive, std::move(denom));
}

/// Batch objective: mean over instances of the (by default symmetrized)
/// instance term plus lambda-weighted terms for each attached semantic
/// positive. Instance-term denominators run over the 2N instance views only,
/// so a batch without semantic rows reduces exactly to the vanilla objective.
template <typename Real>
Tensor<Real> total_loss(const TrainBatch<Real>& batch, const LossConfig& cfg) {
    cfg.validate();
    batch.validate();
    const std::size_t n = batch.n;
    const std::size_t two_n = 2 * n;
    const std::size_t m = batch.u_rows();
    const bool use_semantic = cfg.lambda_mode == LambdaMode::Constant && m > 0;

    detail::check_rows_normalized(batch.z, "total loss");
    Tensor<Real> all = batch.z;
    if (use_semantic) {
        detail::check_rows_normalized(batch.u, "total loss");
        all = concat_rows<Real>({batch.z, batch.u});
    }
    Tensor<Real> scaled = scalar_mul(matmul_nt(all, all), Real(1.0 / cfg.temperature));

    std::vector<Tensor<Real>> terms;
    std::vector<Real> weights;
    const Real inv_n = Real(1) / static_cast<Real>(n);

    // Instance views: denominator is every z row except the anchor.
    // Under the self-inclusive rule the denominator keeps the anchor's own
    // row (self-similarity) and will also receive the positive a second time.
    auto vanilla_denom = [&](std::size_t anchor) {
        std::vector<std::size_t> denom;
        denom.reserve(two_n);
        for (std::size_t k = 0; k < two_n; ++k) {
            if (cfg.negative_rule == NegativeRule::SelfInclusive2N || k != anchor) {
                denom.push_back(k);
            }
        }
        return denom;
    };

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = i;
        const std::size_t b = i + n;
        std::vector<std::size_t> fwd = vanilla_denom(a);
        if (cfg.negative_rule == NegativeRule::SelfInclusive2N) {
            fwd.push_back(b); // the positive is counted a second time under this rule
        }
        Tensor<Real> t_fwd = detail::softmax_ce_term(scaled, a, b, std::move(fwd));
        if (cfg.symmetric) {
            std::vector<std::size_t> rev = vanilla_denom(b);
            if (cfg.negative_rule == NegativeRule::SelfInclusive2N) {
                rev.push_back(a);
            }
            Tensor<Real> t_rev = detail::softmax_ce_term(scaled, b, a, std::move(rev));
            terms.push_back(t_fwd);
            weights.push_back(inv_n / Real(2));
            terms.push_back(t_rev);
            weights.push_back(inv_n / Real(2));
        } else {
            terms.push_back(t_fwd);
            weights.push_back(inv_n);
        }
    }

    if (use_semantic) {
        // Anchor -> set of u columns that must not serve as its negatives.
        std::vector<std::vector<std::size_t>> own_u(n);
        for (const auto& ref : batch.semantic) {
            own_u[ref.anchor].push_back(two_n + ref.u_index);
        }
        for (const auto& ref : batch.semantic) {
            const std::size_t a = ref.anchor;
            const std::size_t pos = two_n + ref.u_index;
            std::vector<std::size_t> denom;
            denom.push_back(pos);
            if (cfg.negative_rule == NegativeRule::SelfInclusive2N) {
                for (std::size_t k = 0; k < two_n; ++k) {
                    denom.push_back(k);
                }
            } else {
                for (std::size_t k = 0; k < two_n; ++k) {
                    if (k != a && k != a + n) {
                        denom.push_back(k);
                    }
                }
                for (std::size_t k = two_n; k < two_n + m; ++k) {
                    if (k == pos) {
                        continue; // already present as the positive
                    }
                    bool excluded = false;
                    if (cfg.exclude_semantic_from_negatives) {
                        for (std::size_t own : own_u[a]) {
                            excluded = excluded || own == k;
                        }
                    }
                    if (!excluded) {
                        denom.push_back(k);
                    }
                }
                if (!cfg.exclude_semantic_from_negatives) {
                    denom.push_back(pos); // the positive also stays a negative
                }
            }
            terms.push_back(detail::softmax_ce_term(scaled, a, pos, std::move(denom)));
            weights.push_back(static_cast<Real>(cfg.lambda_value * ref.weight) * inv_n);
        }
    }

    return weighted_sum(terms, weights);
}

} // namespace sepp
