#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cft/ops.hpp"
#include "cft/tensor.hpp"

namespace cft {

/// Trainable tensor. Gradients accumulate across backward calls until
/// zero_grad(); names are stable and used as checkpoint keys.
template <typename S>
struct Param {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;

    Param() = default;
    Param(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor<S>::zeros(value.shape);
    }

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), S(0)); }
};

/// Append-only operation tape. Nodes are created in topological order, so
/// reverse-mode differentiation is a single reverse sweep. Construction and
/// backward are single-threaded per graph; independent graphs can run in
/// parallel.
template <typename S>
class Graph {
public:
    using NodeId = std::size_t;
    static constexpr NodeId npos = static_cast<NodeId>(-1);

    std::size_t size() const { return nodes_.size(); }

    const Tensor<S>& value(NodeId id) const { return node(id).value; }

    /// Gradient buffer of a node after backward(); zeros if unreachable.
    Tensor<S> grad_of(NodeId id) const {
        check_id(id);
        if (id < grads_.size() && !grads_[id].data.empty()) return grads_[id];
        return Tensor<S>::zeros(nodes_[id].value.shape);
    }

    NodeId input(Tensor<S> t) { return push(std::move(t), {}, nullptr, nullptr); }

    NodeId param(Param<S>& p) { return push(p.value, {}, nullptr, &p); }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<S>& va = value(a);
        const Tensor<S>& vb = value(b);
        Tensor<S> out = matmul_value(va, vb);  // validates shapes
        return push(std::move(out), {a, b}, [](Graph& g, const BackCtx& c) {
            const Tensor<S>& A = g.value(c.parents[0]);
            const Tensor<S>& B = g.value(c.parents[1]);
            const Tensor<S>& dC = c.up;
            const std::size_t m = A.rows(), p = A.cols(), n = B.cols();
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const S d = dC.data[i * n + j];
                    if (d == S(0)) continue;
                    for (std::size_t k = 0; k < p; ++k) dA.data[i * p + k] += d * B.data[k * n + j];
                }
            }
            Tensor<S>& dB = g.grad_buf(c.parents[1]);
            for (std::size_t k = 0; k < p; ++k) {
                for (std::size_t i = 0; i < m; ++i) {
                    const S aik = A.data[i * p + k];
                    if (aik == S(0)) continue;
                    for (std::size_t j = 0; j < n; ++j) dB.data[k * n + j] += aik * dC.data[i * n + j];
                }
            }
        });
    }

    NodeId transpose(NodeId a) {
        const Tensor<S>& v = value(a);
        Tensor<S> out({v.cols(), v.rows()});
        for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out.data[j * v.rows() + i] = v.data[i * v.cols() + j];
        return push(std::move(out), {a}, [](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            const std::size_t r = dA.shape[0], cl = dA.shape[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < cl; ++j) dA.data[i * cl + j] += c.up.data[j * r + i];
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<S>& va = value(a);
        const Tensor<S>& vb = value(b);
        require_same_shape(va, vb, "add");
        Tensor<S> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        return push(std::move(out), {a, b}, [](Graph& g, const BackCtx& c) {
            g.accumulate(c.parents[0], c.up);
            g.accumulate(c.parents[1], c.up);
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor<S>& va = value(a);
        const Tensor<S>& vb = value(b);
        require_same_shape(va, vb, "mul");
        Tensor<S> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
        return push(std::move(out), {a, b}, [](Graph& g, const BackCtx& c) {
            const Tensor<S>& A = g.value(c.parents[0]);
            const Tensor<S>& B = g.value(c.parents[1]);
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            Tensor<S>& dB = g.grad_buf(c.parents[1]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) {
                dA.data[i] += c.up.data[i] * B.data[i];
                dB.data[i] += c.up.data[i] * A.data[i];
            }
        });
    }

    NodeId scale(NodeId a, S factor) {
        Tensor<S> out = value(a);
        for (auto& v : out.data) v *= factor;
        return push(std::move(out), {a}, [factor](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) dA.data[i] += factor * c.up.data[i];
        });
    }

    /// Adds a length-n bias vector to every row of an m-by-n matrix. This is
    /// the only broadcast in the library.
    NodeId add_bias(NodeId a, NodeId bias) {
        const Tensor<S>& va = value(a);
        const Tensor<S>& vb = value(bias);
        if (!va.is_matrix() || vb.rank() != 1 || vb.numel() != va.cols()) {
            throw std::invalid_argument("add_bias: shapes " + shape_str(va.shape) + " and " +
                                        shape_str(vb.shape));
        }
        Tensor<S> out = va;
        const std::size_t n = va.cols();
        for (std::size_t i = 0; i < va.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += vb.data[j];
        return push(std::move(out), {a, bias}, [](Graph& g, const BackCtx& c) {
            g.accumulate(c.parents[0], c.up);
            Tensor<S>& dB = g.grad_buf(c.parents[1]);
            const std::size_t n = dB.numel();
            const std::size_t m = c.up.numel() / n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dB.data[j] += c.up.data[i * n + j];
        });
    }

    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
        const Tensor<S>& v = value(a);
        if (!v.is_matrix() || r0 >= r1 || r1 > v.rows()) {
            throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                        ") on " + shape_str(v.shape));
        }
        const std::size_t n = v.cols();
        Tensor<S> out({r1 - r0, n});
        std::copy(v.data.begin() + static_cast<std::ptrdiff_t>(r0 * n),
                  v.data.begin() + static_cast<std::ptrdiff_t>(r1 * n), out.data.begin());
        return push(std::move(out), {a}, [r0, n](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) dA.data[r0 * n + i] += c.up.data[i];
        });
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
        const Tensor<S>& v = value(a);
        if (!v.is_matrix() || c0 >= c1 || c1 > v.cols()) {
            throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                        ") on " + shape_str(v.shape));
        }
        const std::size_t m = v.rows(), n = v.cols(), w = c1 - c0;
        Tensor<S> out({m, w});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = v.data[i * n + c0 + j];
        return push(std::move(out), {a}, [c0, n, w](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            const std::size_t m = c.up.numel() / w;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) dA.data[i * n + c0 + j] += c.up.data[i * w + j];
        });
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
        const std::size_t n = value(parts[0]).cols();
        std::size_t m = 0;
        for (NodeId p : parts) {
            if (value(p).cols() != n) {
                throw std::invalid_argument("concat_rows: column mismatch " + shape_str(value(p).shape));
            }
            m += value(p).rows();
        }
        Tensor<S> out({m, n});
        std::size_t at = 0;
        for (NodeId p : parts) {
            const auto& v = value(p);
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
            at += v.numel();
        }
        return push(std::move(out), parts, [](Graph& g, const BackCtx& c) {
            std::size_t at = 0;
            for (NodeId p : c.parents) {
                Tensor<S>& dP = g.grad_buf(p);
                for (std::size_t i = 0; i < dP.numel(); ++i) dP.data[i] += c.up.data[at + i];
                at += dP.numel();
            }
        });
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
        const std::size_t m = value(parts[0]).rows();
        std::size_t n = 0;
        for (NodeId p : parts) {
            if (value(p).rows() != m) {
                throw std::invalid_argument("concat_cols: row mismatch " + shape_str(value(p).shape));
            }
            n += value(p).cols();
        }
        Tensor<S> out({m, n});
        std::size_t c0 = 0;
        for (NodeId p : parts) {
            const auto& v = value(p);
            const std::size_t w = v.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) out.data[i * n + c0 + j] = v.data[i * w + j];
            c0 += w;
        }
        return push(std::move(out), parts, [n](Graph& g, const BackCtx& c) {
            const std::size_t m = c.up.numel() / n;
            std::size_t c0 = 0;
            for (NodeId p : c.parents) {
                Tensor<S>& dP = g.grad_buf(p);
                const std::size_t w = dP.shape[1];
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) dP.data[i * w + j] += c.up.data[i * n + c0 + j];
                c0 += w;
            }
        });
    }

    /// Softmax over the last axis, max-subtracted per slice.
    NodeId softmax_last(NodeId a) {
        const Tensor<S>& v = value(a);
        const std::size_t n = v.last_extent();
        const std::size_t slices = v.numel() / n;
        Tensor<S> out = v;
        for (std::size_t s = 0; s < slices; ++s) {
            S* row = &out.data[s * n];
            S m = row[0];
            for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j]);
            S sum = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - m);
                sum += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
        }
        return push(std::move(out), {a}, [n, slices](Graph& g, const BackCtx& c) {
            const Tensor<S>& y = g.value(c.self);
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t s = 0; s < slices; ++s) {
                const S* yr = &y.data[s * n];
                const S* dy = &c.up.data[s * n];
                S dot = S(0);
                for (std::size_t j = 0; j < n; ++j) dot += dy[j] * yr[j];
                for (std::size_t j = 0; j < n; ++j) dA.data[s * n + j] += yr[j] * (dy[j] - dot);
            }
        });
    }

    /// Normalizes each last-axis slice to zero mean / unit variance before
    /// the affine. Zero-variance slices map to beta through the eps term.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, S eps) {
        const Tensor<S>& v = value(x);
        const Tensor<S>& g_ = value(gamma);
        const Tensor<S>& b_ = value(beta);
        const std::size_t n = v.last_extent();
        if (g_.rank() != 1 || g_.numel() != n || b_.rank() != 1 || b_.numel() != n) {
            throw std::invalid_argument("layer_norm: gamma/beta " + shape_str(g_.shape) + "/" +
                                        shape_str(b_.shape) + " do not match last axis of " +
                                        shape_str(v.shape));
        }
        const std::size_t slices = v.numel() / n;
        Tensor<S> out(v.shape);
        std::vector<S> xhat(v.numel());
        std::vector<S> inv_sd(slices);
        for (std::size_t s = 0; s < slices; ++s) {
            const S* row = &v.data[s * n];
            S mean = S(0);
            for (std::size_t j = 0; j < n; ++j) mean += row[j];
            mean /= static_cast<S>(n);
            S var = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                const S d = row[j] - mean;
                var += d * d;
            }
            var /= static_cast<S>(n);
            const S inv = S(1) / std::sqrt(var + eps);
            inv_sd[s] = inv;
            for (std::size_t j = 0; j < n; ++j) {
                const S xh = (row[j] - mean) * inv;
                xhat[s * n + j] = xh;
                out.data[s * n + j] = g_.data[j] * xh + b_.data[j];
            }
        }
        return push(std::move(out), {x, gamma, beta},
                    [n, slices, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Graph& g, const BackCtx& c) {
                        const Tensor<S>& gv = g.value(c.parents[1]);
                        Tensor<S>& dX = g.grad_buf(c.parents[0]);
                        Tensor<S>& dG = g.grad_buf(c.parents[1]);
                        Tensor<S>& dB = g.grad_buf(c.parents[2]);
                        for (std::size_t s = 0; s < slices; ++s) {
                            const S* dy = &c.up.data[s * n];
                            const S* xh = &xhat[s * n];
                            S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                            for (std::size_t j = 0; j < n; ++j) {
                                const S dxh = dy[j] * gv.data[j];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xh[j];
                                dG.data[j] += dy[j] * xh[j];
                                dB.data[j] += dy[j];
                            }
                            mean_dxhat /= static_cast<S>(n);
                            mean_dxhat_xhat /= static_cast<S>(n);
                            for (std::size_t j = 0; j < n; ++j) {
                                const S dxh = dy[j] * gv.data[j];
                                dX.data[s * n + j] += inv_sd[s] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                            }
                        }
                    });
    }

    NodeId relu(NodeId a) {
        Tensor<S> out = value(a);
        for (auto& v : out.data) v = relu_value(v);
        return push(std::move(out), {a}, [](Graph& g, const BackCtx& c) {
            const Tensor<S>& x = g.value(c.parents[0]);
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) {
                if (x.data[i] > S(0)) dA.data[i] += c.up.data[i];
            }
        });
    }

    NodeId gelu(NodeId a) {
        Tensor<S> out = value(a);
        for (auto& v : out.data) v = gelu_value(v);
        return push(std::move(out), {a}, [](Graph& g, const BackCtx& c) {
            const Tensor<S>& x = g.value(c.parents[0]);
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) {
                dA.data[i] += c.up.data[i] * gelu_derivative(x.data[i]);
            }
        });
    }

    NodeId activation(NodeId a, Activation kind) {
        return kind == Activation::Relu ? relu(a) : gelu(a);
    }

    /// Mean over rows: [m x n] -> [1 x n].
    NodeId mean_rows(NodeId a) {
        const Tensor<S>& v = value(a);
        const std::size_t m = v.rows(), n = v.cols();
        Tensor<S> out({1, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.data[j] += v.data[i * n + j];
        for (auto& x : out.data) x /= static_cast<S>(m);
        return push(std::move(out), {a}, [m, n](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            const S inv = S(1) / static_cast<S>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dA.data[i * n + j] += c.up.data[j] * inv;
        });
    }

    /// Elementwise max; ties route the gradient to the first input.
    NodeId emax(NodeId a, NodeId b) {
        const Tensor<S>& va = value(a);
        const Tensor<S>& vb = value(b);
        require_same_shape(va, vb, "emax");
        Tensor<S> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::max(va.data[i], vb.data[i]);
        return push(std::move(out), {a, b}, [](Graph& g, const BackCtx& c) {
            const Tensor<S>& A = g.value(c.parents[0]);
            const Tensor<S>& B = g.value(c.parents[1]);
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            Tensor<S>& dB = g.grad_buf(c.parents[1]);
            for (std::size_t i = 0; i < c.up.numel(); ++i) {
                if (A.data[i] >= B.data[i]) {
                    dA.data[i] += c.up.data[i];
                } else {
                    dB.data[i] += c.up.data[i];
                }
            }
        });
    }

    NodeId sum(NodeId a) {
        const Tensor<S>& v = value(a);
        S s = S(0);
        for (S x : v.data) s += x;
        return push(Tensor<S>::scalar(s), {a}, [](Graph& g, const BackCtx& c) {
            Tensor<S>& dA = g.grad_buf(c.parents[0]);
            for (auto& x : dA.data) x += c.up.data[0];
        });
    }

    /// -log softmax(logits)[label], via log-sum-exp. Input must hold exactly
    /// k logits (row vector or flat vector).
    NodeId cross_entropy(NodeId logits, std::size_t label) {
        const Tensor<S>& v = value(logits);
        const std::size_t k = v.numel();
        if (v.last_extent() != k) {
            throw std::invalid_argument("cross_entropy: logits must be a single slice, got " +
                                        shape_str(v.shape));
        }
        if (label >= k) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                                        std::to_string(k) + ")");
        }
        const S lse = log_sum_exp(v.data);
        return push(Tensor<S>::scalar(lse - v.data[label]), {logits}, [label](Graph& g, const BackCtx& c) {
            const Tensor<S>& lg = g.value(c.parents[0]);
            Tensor<S>& dL = g.grad_buf(c.parents[0]);
            const std::vector<S> p = softmax_vector(lg.data);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const S onehot = (i == label) ? S(1) : S(0);
                dL.data[i] += c.up.data[0] * (p[i] - onehot);
            }
        });
    }

    /// Reverse sweep from a scalar loss. Reachable Params receive their
    /// gradients additively; running twice without zeroing doubles them.
    void backward(NodeId loss) {
        check_id(loss);
        if (value(loss).numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(value(loss).shape));
        }
        grads_.assign(nodes_.size(), Tensor<S>{});
        grad_buf(loss).data[0] = S(1);
        for (std::size_t i = loss + 1; i-- > 0;) {
            const Node& nd = nodes_[i];
            if (grads_[i].data.empty() || !nd.backward) continue;
            BackCtx ctx{i, nd.parents, grads_[i]};
            nd.backward(*this, ctx);
        }
        for (std::size_t i = 0; i <= loss; ++i) {
            Node& nd = nodes_[i];
            if (nd.leaf == nullptr || grads_[i].data.empty()) continue;
            for (std::size_t j = 0; j < grads_[i].numel(); ++j) nd.leaf->grad.data[j] += grads_[i].data[j];
        }
    }

private:
    struct BackCtx {
        NodeId self;
        const std::vector<NodeId>& parents;
        const Tensor<S>& up;
    };
    using BackwardFn = std::function<void(Graph&, const BackCtx&)>;

    struct Node {
        Tensor<S> value;
        std::vector<NodeId> parents;
        BackwardFn backward;
        Param<S>* leaf;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<S>> grads_;

    NodeId push(Tensor<S> value, std::vector<NodeId> parents, BackwardFn fn, Param<S>* leaf = nullptr) {
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(fn), leaf});
        return nodes_.size() - 1;
    }

    const Node& node(NodeId id) const {
        check_id(id);
        return nodes_[id];
    }

    void check_id(NodeId id) const {
        if (id >= nodes_.size()) {
            throw std::invalid_argument("graph: node " + std::to_string(id) + " is not on this tape (size " +
                                        std::to_string(nodes_.size()) + ")");
        }
    }

    Tensor<S>& grad_buf(NodeId id) {
        if (grads_[id].data.empty()) grads_[id] = Tensor<S>::zeros(nodes_[id].value.shape);
        return grads_[id];
    }

    void accumulate(NodeId id, const Tensor<S>& g) {
        Tensor<S>& dst = grad_buf(id);
        for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
    }

    static void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
        if (a.shape != b.shape) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                        shape_str(b.shape));
        }
    }
};

}  // namespace cft
