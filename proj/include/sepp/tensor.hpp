#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sepp/common.hpp"

// Dense row-major tensors with reverse-mode automatic differentiation.
// The tape is implicit: every node carries a creation sequence number, and
// creation order is a topological order of the graph, so the backward pass
// just visits reachable nodes by descending sequence number.
//
// Real is float for training and double for the verification build used by
// the tight gradient-check tolerances.

namespace sepp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

// c += a(MxK) * b(KxP), all row-major.
template <typename Real>
void gemm_acc(const Real* a, const Real* b, Real* c,
              std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * p;
        for (std::size_t t = 0; t < k; ++t) {
            const Real av = arow[t];
            if (av == Real(0)) {
                continue;
            }
            const Real* brow = b + t * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c += a(MxK) * b(PxK)^T
template <typename Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* c,
                 std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const Real* brow = b + j * k;
            Real acc(0);
            for (std::size_t t = 0; t < k; ++t) {
                acc += arow[t] * brow[t];
            }
            crow[j] += acc;
        }
    }
}

// c += a(KxM)^T * b(KxP)
template <typename Real>
void gemm_tn_acc(const Real* a, const Real* b, Real* c,
                 std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t t = 0; t < k; ++t) {
        const Real* arow = a + t * m;
        const Real* brow = b + t * p;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            if (av == Real(0)) {
                continue;
            }
            Real* crow = c + i * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

inline std::uint64_t next_node_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

} // namespace detail

template <typename Real>
class Tensor {
public:
    using value_type = Real;

    struct Node {
        Shape shape;
        std::vector<Real> values;
        std::vector<Real> grad; // allocated lazily, same length as values
        bool requires_grad = false;
        std::uint64_t seq = 0;
        const char* op = "leaf";
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn; // null for leaves

        void ensure_grad() {
            if (grad.size() != values.size()) {
                grad.assign(values.size(), Real(0));
            }
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;

    static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false) {
        require(shape_numel(shape) == values.size(),
                "tensor: shape ", shape_str(shape), " does not match value count ", values.size());
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        node->seq = detail::next_node_seq();
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<Real> v(shape_numel(shape), Real(0));
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(Real v, bool requires_grad = false) {
        return from_values({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->values.size(); }
    bool is_scalar() const { return numel() == 1; }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    const std::vector<Real>& values() const { return node_->values; }
    std::vector<Real>& mutable_values() { return node_->values; }

    /// Gradient accumulator; empty until a backward pass touches this node.
    const std::vector<Real>& grad() const { return node_->grad; }

    void zero_grad() {
        node_->grad.assign(node_->values.size(), Real(0));
    }

    Real value_at(std::size_t flat) const { return node_->values[flat]; }

    Real at2(std::size_t r, std::size_t c) const {
        const Shape& s = node_->shape;
        require(s.size() == 2, "at2: tensor is not 2-D, shape ", shape_str(s));
        return node_->values[r * s[1] + c];
    }

    const NodePtr& impl() const { return node_; }

    static Tensor make_op(Shape shape, std::vector<Real> values, const char* op,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
        bool needs_grad = false;
        for (const Tensor& t : inputs) {
            needs_grad = needs_grad || t.requires_grad();
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = needs_grad;
        node->seq = detail::next_node_seq();
        node->op = op;
        if (needs_grad) {
            node->parents.reserve(inputs.size());
            for (Tensor& t : inputs) {
                node->parents.push_back(t.node_);
            }
            node->backward_fn = std::move(backward_fn);
        }
        return Tensor(std::move(node));
    }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---- backward pass ----

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are local to one pass.
template <typename Real>
void backward(const Tensor<Real>& loss) {
    require(loss.defined(), "backward: undefined tensor");
    require(loss.is_scalar(), "backward: loss must be scalar, got shape ", shape_str(loss.shape()));
    require(loss.requires_grad(),
            "backward: graph is detached, no differentiable leaf reaches the loss");

    using Node = typename Tensor<Real>::Node;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.impl().get()};
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back(p.get());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });

    // Non-leaf gradients are recomputed each pass; leaves keep accumulating.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->values.size(), Real(0));
        } else {
            n->ensure_grad();
        }
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += Real(1);
    for (Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn(*n);
        }
    }
}

// ---- elementwise and structural operations ----

namespace detail {

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    require(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* op) {
    for (Real v : t.values()) {
        require(std::isfinite(v), op, ": non-finite input value");
    }
}

} // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] + b.values()[i];
    }
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "add", {a, b},
        [an, bn](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    bn->grad[i] += n.grad[i];
                }
            }
        });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] - b.values()[i];
    }
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "sub", {a, b},
        [an, bn](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    bn->grad[i] -= n.grad[i];
                }
            }
        });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * b.values()[i];
    }
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "mul", {a, b},
        [an, bn](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i] * bn->values[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    bn->grad[i] += n.grad[i] * an->values[i];
                }
            }
        });
}

template <typename Real>
Tensor<Real> scalar_mul(const Tensor<Real>& a, Real c) {
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * c;
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "scalar_mul", {a},
        [an, c](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i] * c;
                }
            }
        });
}

/// Broadcast add of a length-D row vector onto every row of an NxD matrix.
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.shape().size() == 2, "add_rowvec: matrix required, got ", shape_str(a.shape()));
    require(b.shape().size() == 1 && b.shape()[0] == a.shape()[1],
            "add_rowvec: vector shape ", shape_str(b.shape()),
            " does not match matrix ", shape_str(a.shape()));
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    std::vector<Real> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = a.values()[r * cols + c] + b.values()[c];
        }
    }
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "add_rowvec", {a, b},
        [an, bn, rows, cols](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        bn->grad[c] += n.grad[r * cols + c];
                    }
                }
            }
        });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a.values()[i]);
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "exp", {a},
        [an](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i] * n.values[i];
                }
            }
        });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real v = a.values()[i];
        require(std::isfinite(v) && v > Real(0), "log: input must be finite and positive, got ",
                static_cast<double>(v));
        out[i] = std::log(v);
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "log", {a},
        [an](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i] / an->values[i];
                }
            }
        });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    std::vector<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] > Real(0) ? a.values()[i] : Real(0);
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "relu", {a},
        [an](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    if (an->values[i] > Real(0)) {
                        an->grad[i] += n.grad[i];
                    }
                }
            }
        });
}

/// Row-wise stable softmax of an NxD matrix.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
    require(a.shape().size() == 2, "softmax_rows: matrix required, got ", shape_str(a.shape()));
    detail::check_finite(a, "softmax_rows");
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    std::vector<Real> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = a.values().data() + r * cols;
        Real* y = out.data() + r * cols;
        Real m = x[0];
        for (std::size_t c = 1; c < cols; ++c) {
            m = std::max(m, x[c]);
        }
        Real denom(0);
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - m);
            denom += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] /= denom;
        }
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "softmax_rows", {a},
        [an, rows, cols](typename Tensor<Real>::Node& n) {
            if (!an->requires_grad) {
                return;
            }
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = n.values.data() + r * cols;
                const Real* g = n.grad.data() + r * cols;
                Real dot(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    dot += y[c] * g[c];
                }
                Real* gx = an->grad.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) {
                    gx[c] += y[c] * (g[c] - dot);
                }
            }
        });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real total(0);
    for (Real v : a.values()) {
        total += v;
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op({1}, {total}, "sum", {a},
        [an](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->grad.size(); ++i) {
                    an->grad[i] += n.grad[0];
                }
            }
        });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    require(a.numel() > 0, "mean: empty tensor");
    Real total(0);
    for (Real v : a.values()) {
        total += v;
    }
    const Real inv = Real(1) / static_cast<Real>(a.numel());
    auto* an = a.impl().get();
    return Tensor<Real>::make_op({1}, {total * inv}, "mean", {a},
        [an, inv](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->grad.size(); ++i) {
                    an->grad[i] += n.grad[0] * inv;
                }
            }
        });
}

/// Rescale every row of an NxD matrix to unit Euclidean norm. The backward
/// rule projects the incoming gradient onto the tangent space of the sphere.
template <typename Real>
Tensor<Real> l2_normalize_rows(const Tensor<Real>& a) {
    require(a.shape().size() == 2, "l2_normalize_rows: matrix required, got ",
            shape_str(a.shape()));
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    std::vector<Real> out(a.numel());
    std::vector<Real> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = a.values().data() + r * cols;
        Real sq(0);
        for (std::size_t c = 0; c < cols; ++c) {
            sq += x[c] * x[c];
        }
        require(sq > Real(0), "l2_normalize_rows: row ", r, " has zero norm (degenerate input)");
        const Real norm = std::sqrt(sq);
        norms[r] = norm;
        Real* y = out.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = x[c] / norm;
        }
    }
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(a.shape(), std::move(out), "l2_normalize_rows", {a},
        [an, rows, cols, norms](typename Tensor<Real>::Node& n) {
            if (!an->requires_grad) {
                return;
            }
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = n.values.data() + r * cols;
                const Real* g = n.grad.data() + r * cols;
                Real dot(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    dot += y[c] * g[c];
                }
                Real* gx = an->grad.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) {
                    gx[c] += (g[c] - dot * y[c]) / norms[r];
                }
            }
        });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape new_shape) {
    require(shape_numel(new_shape) == a.numel(), "reshape: cannot view ",
            shape_str(a.shape()), " as ", shape_str(new_shape));
    std::vector<Real> out = a.values();
    auto* an = a.impl().get();
    return Tensor<Real>::make_op(std::move(new_shape), std::move(out), "reshape", {a},
        [an](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    an->grad[i] += n.grad[i];
                }
            }
        });
}

/// Stack 2-D blocks with a common column count into one matrix.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts[0].shape().size() == 2 ? parts[0].shape()[1] : 0;
    require(cols > 0, "concat_rows: inputs must be 2-D");
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require(p.shape().size() == 2 && p.shape()[1] == cols,
                "concat_rows: incompatible block ", shape_str(p.shape()));
        rows += p.shape()[0];
    }
    std::vector<Real> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    std::vector<typename Tensor<Real>::Node*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) {
        raw.push_back(p.impl().get());
    }
    return Tensor<Real>::make_op({rows, cols}, std::move(out), "concat_rows", parts,
        [raw](typename Tensor<Real>::Node& n) {
            std::size_t offset = 0;
            for (auto* p : raw) {
                const std::size_t count = p->values.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < count; ++i) {
                        p->grad[i] += n.grad[offset + i];
                    }
                }
                offset += count;
            }
        });
}

/// One entry of a matrix as a scalar node.
template <typename Real>
Tensor<Real> select_entry(const Tensor<Real>& a, std::size_t r, std::size_t c) {
    require(a.shape().size() == 2, "select_entry: matrix required");
    require(r < a.shape()[0] && c < a.shape()[1], "select_entry: index (", r, ",", c,
            ") out of range for ", shape_str(a.shape()));
    const std::size_t cols = a.shape()[1];
    auto* an = a.impl().get();
    return Tensor<Real>::make_op({1}, {a.values()[r * cols + c]}, "select_entry", {a},
        [an, r, c, cols](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                an->grad[r * cols + c] += n.grad[0];
            }
        });
}

/// log-sum-exp over a chosen subset of columns of one matrix row, computed
/// with max subtraction. Duplicate column indices contribute once per entry.
template <typename Real>
Tensor<Real> row_lse_subset(const Tensor<Real>& a, std::size_t r,
                            std::vector<std::size_t> cols) {
    require(a.shape().size() == 2, "row_lse_subset: matrix required");
    require(r < a.shape()[0], "row_lse_subset: row ", r, " out of range");
    require(!cols.empty(), "row_lse_subset: empty column subset");
    const std::size_t width = a.shape()[1];
    const Real* x = a.values().data() + r * width;
    Real m = -std::numeric_limits<Real>::infinity();
    for (std::size_t c : cols) {
        require(c < width, "row_lse_subset: column ", c, " out of range");
        require(std::isfinite(x[c]), "row_lse_subset: non-finite input");
        m = std::max(m, x[c]);
    }
    Real total(0);
    for (std::size_t c : cols) {
        total += std::exp(x[c] - m);
    }
    const Real lse = m + std::log(total);
    auto* an = a.impl().get();
    return Tensor<Real>::make_op({1}, {lse}, "row_lse_subset", {a},
        [an, r, width, cols = std::move(cols), lse](typename Tensor<Real>::Node& n) {
            if (!an->requires_grad) {
                return;
            }
            an->ensure_grad();
            const Real g = n.grad[0];
            const Real* x = an->values.data() + r * width;
            Real* gx = an->grad.data() + r * width;
            for (std::size_t c : cols) {
                gx[c] += g * std::exp(x[c] - lse);
            }
        });
}

/// Scalar combination sum_t w_t * x_t of scalar nodes with constant weights.
template <typename Real>
Tensor<Real> weighted_sum(const std::vector<Tensor<Real>>& terms,
                          const std::vector<Real>& weights) {
    require(!terms.empty(), "weighted_sum: no terms");
    require(terms.size() == weights.size(), "weighted_sum: ", terms.size(), " terms vs ",
            weights.size(), " weights");
    Real total(0);
    std::vector<typename Tensor<Real>::Node*> raw;
    raw.reserve(terms.size());
    for (std::size_t t = 0; t < terms.size(); ++t) {
        require(terms[t].is_scalar(), "weighted_sum: term ", t, " is not scalar");
        total += weights[t] * terms[t].values()[0];
        raw.push_back(terms[t].impl().get());
    }
    return Tensor<Real>::make_op({1}, {total}, "weighted_sum", terms,
        [raw, weights](typename Tensor<Real>::Node& n) {
            for (std::size_t t = 0; t < raw.size(); ++t) {
                if (raw[t]->requires_grad) {
                    raw[t]->ensure_grad();
                    raw[t]->grad[0] += n.grad[0] * weights[t];
                }
            }
        });
}

/// Mean softmax cross entropy of an NxC logit matrix against integer labels.
template <typename Real>
Tensor<Real> cross_entropy_rows(const Tensor<Real>& logits, const std::vector<int>& labels) {
    require(logits.shape().size() == 2, "cross_entropy_rows: matrix required");
    const std::size_t rows = logits.shape()[0];
    const std::size_t cols = logits.shape()[1];
    require(labels.size() == rows, "cross_entropy_rows: ", labels.size(), " labels for ",
            rows, " rows");
    detail::check_finite(logits, "cross_entropy_rows");
    Real total(0);
    for (std::size_t r = 0; r < rows; ++r) {
        const int y = labels[r];
        require(y >= 0 && static_cast<std::size_t>(y) < cols,
                "cross_entropy_rows: label ", y, " out of range at row ", r);
        const Real* x = logits.values().data() + r * cols;
        Real m = x[0];
        for (std::size_t c = 1; c < cols; ++c) {
            m = std::max(m, x[c]);
        }
        Real denom(0);
        for (std::size_t c = 0; c < cols; ++c) {
            denom += std::exp(x[c] - m);
        }
        total += m + std::log(denom) - x[y];
    }
    const Real inv = Real(1) / static_cast<Real>(rows);
    auto* ln = logits.impl().get();
    return Tensor<Real>::make_op({1}, {total * inv}, "cross_entropy_rows", {logits},
        [ln, labels, rows, cols, inv](typename Tensor<Real>::Node& n) {
            if (!ln->requires_grad) {
                return;
            }
            ln->ensure_grad();
            const Real g = n.grad[0] * inv;
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* x = ln->values.data() + r * cols;
                Real* gx = ln->grad.data() + r * cols;
                Real m = x[0];
                for (std::size_t c = 1; c < cols; ++c) {
                    m = std::max(m, x[c]);
                }
                Real denom(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    denom += std::exp(x[c] - m);
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    const Real p = std::exp(x[c] - m) / denom;
                    gx[c] += g * (p - (static_cast<std::size_t>(labels[r]) == c ? Real(1) : Real(0)));
                }
            }
        });
}

// ---- matrix products ----

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul: 2-D operands required, got ", shape_str(a.shape()), " and ",
            shape_str(b.shape()));
    require(a.shape()[1] == b.shape()[0], "matmul: inner dimensions disagree: ",
            shape_str(a.shape()), " x ", shape_str(b.shape()));
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t p = b.shape()[1];
    std::vector<Real> out(m * p, Real(0));
    detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, p);
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op({m, p}, std::move(out), "matmul", {a, b},
        [an, bn, m, k, p](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * B^T
                detail::gemm_nt_acc(n.grad.data(), bn->values.data(), an->grad.data(), m, p, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB (KxP) = A^T * dC
                detail::gemm_tn_acc(an->values.data(), n.grad.data(), bn->grad.data(), k, m, p);
            }
        });
}

/// a (MxK) times b (PxK) transposed; the similarity-matrix product.
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul_nt: 2-D operands required");
    require(a.shape()[1] == b.shape()[1], "matmul_nt: inner dimensions disagree: ",
            shape_str(a.shape()), " x ", shape_str(b.shape()), "^T");
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t p = b.shape()[0];
    std::vector<Real> out(m * p, Real(0));
    detail::gemm_nt_acc(a.values().data(), b.values().data(), out.data(), m, k, p);
    auto* an = a.impl().get();
    auto* bn = b.impl().get();
    return Tensor<Real>::make_op({m, p}, std::move(out), "matmul_nt", {a, b},
        [an, bn, m, k, p](typename Tensor<Real>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * B
                detail::gemm_acc(n.grad.data(), bn->values.data(), an->grad.data(), m, p, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB (PxK) = dC^T * A
                detail::gemm_tn_acc(n.grad.data(), an->values.data(), bn->grad.data(), p, m, k);
            }
        });
}

} // namespace sepp
