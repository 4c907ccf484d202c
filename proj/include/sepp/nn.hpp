#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/dataset.hpp"
#include "sepp/rng.hpp"
#include "sepp/serialize.hpp"
#include "sepp/tensor.hpp"

// Desk-scale encoder: a small strided conv net (or MLP) plus a two-layer
// projection head, with SGD-momentum and LARS optimizers. The same encoder
// also fills the "reference encoder" role for mining when bootstrapped.

namespace sepp {

// ---- convolution ops ----

namespace detail {

// Scatter/gather geometry shared by the conv forward and backward passes.
struct ConvGeom {
    std::size_t c, h, w, kh, kw, oh, ow, stride, pad;
    std::size_t col_rows() const { return c * kh * kw; }
    std::size_t col_cols() const { return oh * ow; }
};

template <typename Real>
void im2col(const Real* img, const ConvGeom& g, Real* col) {
    for (std::size_t cc = 0; cc < g.c; ++cc) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                Real* dst = col + ((cc * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                        const bool inside = iy >= 0 && iy < std::ptrdiff_t(g.h) &&
                                            ix >= 0 && ix < std::ptrdiff_t(g.w);
                        dst[oy * g.ow + ox] =
                            inside ? img[(cc * g.h + std::size_t(iy)) * g.w + std::size_t(ix)]
                                   : Real(0);
                    }
                }
            }
        }
    }
}

template <typename Real>
void col2im_acc(const Real* col, const ConvGeom& g, Real* img_grad) {
    for (std::size_t cc = 0; cc < g.c; ++cc) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const Real* src = col + ((cc * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    if (iy < 0 || iy >= std::ptrdiff_t(g.h)) {
                        continue;
                    }
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                        if (ix < 0 || ix >= std::ptrdiff_t(g.w)) {
                            continue;
                        }
                        img_grad[(cc * g.h + std::size_t(iy)) * g.w + std::size_t(ix)] +=
                            src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// 2-D convolution, NCHW, square stride/padding. Weight is [F, C, kh, kw],
/// bias is [F].
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    std::size_t stride, std::size_t pad) {
    require(x.shape().size() == 4, "conv2d: input must be [B,C,H,W], got ",
            shape_str(x.shape()));
    require(w.shape().size() == 4, "conv2d: weight must be [F,C,kh,kw], got ",
            shape_str(w.shape()));
    require(stride >= 1, "conv2d: stride must be at least 1");
    const std::size_t batch = x.shape()[0];
    detail::ConvGeom g;
    g.c = x.shape()[1];
    g.h = x.shape()[2];
    g.w = x.shape()[3];
    g.kh = w.shape()[2];
    g.kw = w.shape()[3];
    g.stride = stride;
    g.pad = pad;
    const std::size_t filters = w.shape()[0];
    require(w.shape()[1] == g.c, "conv2d: weight channels ", w.shape()[1],
            " do not match input channels ", g.c);
    require(bias.shape() == Shape{filters}, "conv2d: bias shape ", shape_str(bias.shape()),
            " does not match ", filters, " filters");
    require(g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw,
            "conv2d: kernel ", g.kh, "x", g.kw, " exceeds padded input ", g.h + 2 * pad,
            "x", g.w + 2 * pad);
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

    std::vector<Real> out(batch * filters * g.col_cols(), Real(0));
    std::vector<Real> col(g.col_rows() * g.col_cols());
    for (std::size_t b = 0; b < batch; ++b) {
        detail::im2col(x.values().data() + b * g.c * g.h * g.w, g, col.data());
        Real* y = out.data() + b * filters * g.col_cols();
        detail::gemm_acc(w.values().data(), col.data(), y, filters, g.col_rows(),
                         g.col_cols());
        for (std::size_t f = 0; f < filters; ++f) {
            const Real bv = bias.values()[f];
            for (std::size_t s = 0; s < g.col_cols(); ++s) {
                y[f * g.col_cols() + s] += bv;
            }
        }
    }

    auto* xn = x.impl().get();
    auto* wn = w.impl().get();
    auto* bn = bias.impl().get();
    return Tensor<Real>::make_op({batch, filters, g.oh, g.ow}, std::move(out), "conv2d",
                                 {x, w, bias},
        [xn, wn, bn, g, batch, filters](typename Tensor<Real>::Node& n) {
            std::vector<Real> col(g.col_rows() * g.col_cols());
            std::vector<Real> dcol(g.col_rows() * g.col_cols());
            for (std::size_t b = 0; b < batch; ++b) {
                const Real* dy = n.grad.data() + b * filters * g.col_cols();
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t f = 0; f < filters; ++f) {
                        Real acc(0);
                        for (std::size_t s = 0; s < g.col_cols(); ++s) {
                            acc += dy[f * g.col_cols() + s];
                        }
                        bn->grad[f] += acc;
                    }
                }
                if (wn->requires_grad || xn->requires_grad) {
                    detail::im2col(xn->values.data() + b * g.c * g.h * g.w, g, col.data());
                }
                if (wn->requires_grad) {
                    wn->ensure_grad();
                    // dW = dY x col^T
                    detail::gemm_nt_acc(dy, col.data(), wn->grad.data(), filters,
                                        g.col_cols(), g.col_rows());
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    // dCol = W^T x dY, then scatter back through the im2col map
                    std::fill(dcol.begin(), dcol.end(), Real(0));
                    detail::gemm_tn_acc(wn->values.data(), dy, dcol.data(), g.col_rows(),
                                        filters, g.col_cols());
                    detail::col2im_acc(dcol.data(), g,
                                       xn->grad.data() + b * g.c * g.h * g.w);
                }
            }
        });
}

/// Mean over the spatial dims: [B,C,H,W] -> [B,C].
template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
    require(x.shape().size() == 4, "global_avg_pool: input must be [B,C,H,W], got ",
            shape_str(x.shape()));
    const std::size_t batch = x.shape()[0];
    const std::size_t channels = x.shape()[1];
    const std::size_t spatial = x.shape()[2] * x.shape()[3];
    require(spatial > 0, "global_avg_pool: empty spatial extent");
    std::vector<Real> out(batch * channels);
    const Real inv = Real(1) / static_cast<Real>(spatial);
    for (std::size_t i = 0; i < batch * channels; ++i) {
        Real acc(0);
        const Real* src = x.values().data() + i * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
            acc += src[s];
        }
        out[i] = acc * inv;
    }
    auto* xn = x.impl().get();
    return Tensor<Real>::make_op({batch, channels}, std::move(out), "global_avg_pool", {x},
        [xn, spatial, inv](typename Tensor<Real>::Node& n) {
            if (!xn->requires_grad) {
                return;
            }
            xn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const Real g = n.grad[i] * inv;
                Real* dst = xn->grad.data() + i * spatial;
                for (std::size_t s = 0; s < spatial; ++s) {
                    dst[s] += g;
                }
            }
        });
}

// ---- encoder ----

enum class Architecture { SmallConv, Mlp };

struct EncoderConfig {
    Architecture architecture = Architecture::SmallConv;
    std::vector<std::size_t> conv_channels = {32, 64, 128, 128};
    std::size_t mlp_hidden = 128;
    std::size_t projection_dim = 64;
    std::size_t input_channels = 3;
    std::size_t input_height = 32;
    std::size_t input_width = 32;

    void validate() const {
        require(projection_dim >= 2, "encoder: projection_dim must be at least 2, got ",
                projection_dim);
        require(input_channels >= 1 && input_height >= 1 && input_width >= 1,
                "encoder: empty input shape");
        if (architecture == Architecture::SmallConv) {
            require(!conv_channels.empty(), "encoder: conv architecture needs channels");
        } else {
            require(mlp_hidden >= 1, "encoder: mlp hidden width must be at least 1");
        }
    }

    std::size_t backbone_dim() const {
        return architecture == Architecture::SmallConv ? conv_channels.back() : mlp_hidden;
    }
};

template <typename Real>
using NamedParams = std::vector<std::pair<std::string, Tensor<Real>>>;

template <typename Real>
struct Encoder {
    EncoderConfig cfg;
    NamedParams<Real> params;

    const Tensor<Real>& param(const std::string& name) const {
        for (const auto& [n, t] : params) {
            if (n == name) {
                return t;
            }
        }
        fail("encoder: no parameter named ", name);
    }

    /// Kaiming-uniform weights (fan-in scaling), zero biases, all seeded.
    static Encoder init(const EncoderConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Encoder enc;
        enc.cfg = cfg;
        std::size_t ordinal = 0;
        auto add_kaiming = [&](const std::string& name, Shape shape, std::size_t fan_in) {
            const double bound = std::sqrt(6.0 / double(fan_in));
            rng::Stream stream(rng::mix(seed, ordinal++));
            std::vector<Real> values(shape_numel(shape));
            for (Real& v : values) {
                v = static_cast<Real>(stream.uniform(-bound, bound));
            }
            enc.params.emplace_back(name,
                                    Tensor<Real>::from_values(std::move(shape),
                                                              std::move(values), true));
        };
        auto add_zeros = [&](const std::string& name, Shape shape) {
            ++ordinal;
            enc.params.emplace_back(name, Tensor<Real>::zeros(std::move(shape), true));
        };

        if (cfg.architecture == Architecture::SmallConv) {
            std::size_t in_c = cfg.input_channels;
            for (std::size_t layer = 0; layer < cfg.conv_channels.size(); ++layer) {
                const std::size_t out_c = cfg.conv_channels[layer];
                const std::string base = "conv" + std::to_string(layer + 1);
                add_kaiming(base + ".weight", {out_c, in_c, 3, 3}, in_c * 9);
                add_zeros(base + ".bias", {out_c});
                in_c = out_c;
            }
        } else {
            const std::size_t flat = cfg.input_channels * cfg.input_height * cfg.input_width;
            add_kaiming("fc1.weight", {flat, cfg.mlp_hidden}, flat);
            add_zeros("fc1.bias", {cfg.mlp_hidden});
            add_kaiming("fc2.weight", {cfg.mlp_hidden, cfg.mlp_hidden}, cfg.mlp_hidden);
            add_zeros("fc2.bias", {cfg.mlp_hidden});
        }
        const std::size_t bdim = cfg.backbone_dim();
        add_kaiming("head1.weight", {bdim, bdim}, bdim);
        add_zeros("head1.bias", {bdim});
        add_kaiming("head2.weight", {bdim, cfg.projection_dim}, bdim);
        add_zeros("head2.bias", {cfg.projection_dim});
        return enc;
    }

    /// Backbone output before the projection head, shape [B, backbone_dim].
    /// This is the representation the linear probe reads.
    Tensor<Real> forward_features(const Tensor<Real>& batch) const {
        require(batch.shape().size() == 4 && batch.shape()[1] == cfg.input_channels &&
                    batch.shape()[2] == cfg.input_height &&
                    batch.shape()[3] == cfg.input_width,
                "encoder: input shape ", shape_str(batch.shape()),
                " does not match configured [B,", cfg.input_channels, ",",
                cfg.input_height, ",", cfg.input_width, "]");
        const std::size_t b = batch.shape()[0];
        Tensor<Real> h;
        if (cfg.architecture == Architecture::SmallConv) {
            h = batch;
            for (std::size_t layer = 0; layer < cfg.conv_channels.size(); ++layer) {
                const std::string base = "conv" + std::to_string(layer + 1);
                h = relu(conv2d(h, param(base + ".weight"), param(base + ".bias"), 2, 1));
            }
            h = global_avg_pool(h);
        } else {
            h = reshape(batch, {b, cfg.input_channels * cfg.input_height * cfg.input_width});
            h = relu(add_rowvec(matmul(h, param("fc1.weight")), param("fc1.bias")));
            h = relu(add_rowvec(matmul(h, param("fc2.weight")), param("fc2.bias")));
        }
        return h;
    }

    /// Batch of views -> unnormalized projections z, shape [B, projection_dim].
    Tensor<Real> forward(const Tensor<Real>& batch) const {
        Tensor<Real> h = forward_features(batch);
        h = relu(add_rowvec(matmul(h, param("head1.weight")), param("head1.bias")));
        Tensor<Real> z = add_rowvec(matmul(h, param("head2.weight")), param("head2.bias"));
        for (Real v : z.values()) {
            require(std::isfinite(v), "encoder: non-finite activation in projection output");
        }
        return z;
    }
};

/// Pack image views into an NCHW batch tensor, validating dims against the
/// encoder configuration.
template <typename Real>
Tensor<Real> views_to_tensor(const std::vector<ImageRecord>& views,
                             const EncoderConfig& cfg, bool requires_grad = false) {
    require(!views.empty(), "views_to_tensor: empty batch");
    const std::size_t item = cfg.input_channels * cfg.input_height * cfg.input_width;
    std::vector<Real> values;
    values.reserve(views.size() * item);
    for (const ImageRecord& v : views) {
        require(v.channels == cfg.input_channels && v.height == cfg.input_height &&
                    v.width == cfg.input_width,
                "views_to_tensor: view ", v.index, " has shape ", v.channels, "x", v.height,
                "x", v.width, ", expected ", cfg.input_channels, "x", cfg.input_height,
                "x", cfg.input_width);
        for (float p : v.pixels) {
            values.push_back(static_cast<Real>(p));
        }
    }
    return Tensor<Real>::from_values({views.size(), cfg.input_channels, cfg.input_height,
                                      cfg.input_width},
                                     std::move(values), requires_grad);
}

/// Encode a dataset in batches into a row-normalized embedding matrix, rows
/// in dataset order.
template <typename Real>
EmbeddingMatrix embed_dataset(const Encoder<Real>& enc,
                              const std::vector<ImageRecord>& images,
                              std::size_t batch_size) {
    require(batch_size >= 1, "embed_dataset: batch_size must be at least 1");
    EmbeddingMatrix emb;
    emb.n = images.size();
    emb.d = enc.cfg.projection_dim;
    emb.rows.resize(emb.n * emb.d);
    emb.normalized = true;
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, images.size() - start);
        std::vector<ImageRecord> chunk(images.begin() + std::ptrdiff_t(start),
                                       images.begin() + std::ptrdiff_t(start + count));
        Tensor<Real> z = l2_normalize_rows(enc.forward(views_to_tensor<Real>(chunk, enc.cfg)));
        for (std::size_t r = 0; r < count; ++r) {
            for (std::size_t c = 0; c < emb.d; ++c) {
                emb.rows[(start + r) * emb.d + c] =
                    static_cast<float>(z.values()[r * emb.d + c]);
            }
        }
    }
    return emb;
}

// ---- optimizers ----

enum class OptimizerKind { SgdMomentum, Lars };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 0.5;
    double momentum = 0.9;
    double weight_decay = 1e-6;

    void validate() const {
        require(learning_rate > 0.0, "optimizer: learning_rate must be positive, got ",
                learning_rate);
        require(momentum >= 0.0 && momentum < 1.0, "optimizer: momentum must lie in [0,1), got ",
                momentum);
    }
};

/// SGD with momentum (v <- m v + g + wd p; p <- p - lr v) and LARS (the same
/// update with the step direction rescaled per parameter tensor by
/// ||p|| / ||g + wd p||).
template <typename Real>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }

    /// Apply one update. `lr_scale` multiplies the configured learning rate
    /// for this step only (e.g. a schedule); momentum state is unaffected.
    void step(NamedParams<Real>& params, double lr_scale = 1.0) {
        if (velocity_.empty()) {
            velocity_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity_[i].assign(params[i].second.numel(), Real(0));
            }
        }
        require(velocity_.size() == params.size(),
                "optimizer: parameter list changed size mid-training");
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& [name, tensor] = params[i];
            const auto& grad = tensor.grad();
            require(grad.size() == tensor.numel(), "optimizer: gradient missing for parameter ",
                    name);
            for (Real g : grad) {
                require(std::isfinite(g), "optimizer: non-finite gradient in parameter ",
                        name, ", aborting");
            }
            auto& values = tensor.mutable_values();
            auto& vel = velocity_[i];
            const Real m = static_cast<Real>(cfg_.momentum);
            const Real lr = static_cast<Real>(cfg_.learning_rate * lr_scale);
            const Real wd = static_cast<Real>(cfg_.weight_decay);
            Real trust(1);
            if (cfg_.kind == OptimizerKind::Lars) {
                double p_norm = 0.0, g_norm = 0.0;
                for (std::size_t j = 0; j < values.size(); ++j) {
                    const double eff = double(grad[j]) + double(wd) * values[j];
                    p_norm += double(values[j]) * values[j];
                    g_norm += eff * eff;
                }
                p_norm = std::sqrt(p_norm);
                g_norm = std::sqrt(g_norm);
                trust = (p_norm > 0.0 && g_norm > 0.0) ? static_cast<Real>(p_norm / g_norm)
                                                       : Real(1);
            }
            for (std::size_t j = 0; j < values.size(); ++j) {
                const Real eff = grad[j] + wd * values[j];
                vel[j] = m * vel[j] + trust * eff;
                values[j] -= lr * vel[j];
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<std::vector<Real>> velocity_;
};

template <typename Real>
void zero_grads(NamedParams<Real>& params) {
    for (auto& [name, tensor] : params) {
        tensor.zero_grad();
    }
}

} // namespace sepp
