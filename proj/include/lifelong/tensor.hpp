#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/errors.hpp"

namespace lifelong {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {
struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // same length as values once touched
    bool requires_grad = false;
};
}  // namespace detail

// Dense 64-bit tensor. Copying a Tensor copies the handle, not the storage;
// use clone() for an independent copy. Gradients live next to the values and
// accumulate additively across backward calls until zeroed.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double v, bool requires_grad = false) {
        for (std::size_t d : shape)
            if (d == 0) throw DimensionError("tensor shape must have positive dims, got " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<detail::TensorData>();
        t.d_->shape = std::move(shape);
        t.d_->values.assign(shape_numel(t.d_->shape), v);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw DimensionError("tensor values length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t = zeros(shape, requires_grad);
        t.d_->values = std::move(values);
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->values.size(); }
    bool is_scalar() const { return d_->values.size() == 1; }

    std::size_t rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
    std::size_t cols() const { return d_->shape.size() == 2 ? d_->shape[1] : d_->values.size(); }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }

    double value() const {
        if (!is_scalar()) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
        return d_->values[0];
    }

    double at(std::size_t i, std::size_t j) const { return d_->values[i * cols() + j]; }
    double& at(std::size_t i, std::size_t j) { return d_->values[i * cols() + j]; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) {
        d_->requires_grad = b;
        if (b && d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0);
    }

    std::vector<double>& grad() {
        if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0);
        return d_->grad;
    }
    const std::vector<double>& grad() const {
        const_cast<Tensor*>(this)->grad();
        return d_->grad;
    }

    void zero_grad() { d_->grad.assign(d_->values.size(), 0.0); }

    // independent deep copy (gradient buffer not carried over)
    Tensor clone() const {
        Tensor t = Tensor::from(d_->shape, d_->values, false);
        t.d_->requires_grad = d_->requires_grad;
        if (d_->requires_grad) t.d_->grad.assign(d_->values.size(), 0.0);
        return t;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    detail::TensorData* data_ptr() const { return d_.get(); }

private:
    std::shared_ptr<detail::TensorData> d_;
};

// Define-by-run tape. Ops compute eagerly and append a backward record when
// recording is on and an input requires grad. A Graph and the tensors flowing
// through it belong to a single thread.
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    std::size_t size() const { return nodes_.size(); }
    bool recording() const { return recording_; }

    // ---- ops ----

    Tensor matmul(Tensor a, Tensor b) {
        if (a.shape().size() != 2 || b.shape().size() != 2)
            throw DimensionError("matmul: operands must be 2-d, got " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()));
        const std::size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
        if (k != k2)
            throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        Tensor out = Tensor::zeros({m, n});
        const double* av = a.values().data();
        const double* bv = b.values().data();
        double* ov = out.values().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
                ov[i * n + j] = acc;
            }
        finish("matmul", out, {a, b}, [a, b, out, m, n, k]() mutable {
            const std::vector<double>& g = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                const double* bv = b.values().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                const double* av = a.values().data();
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
                        gb[p * n + j] += acc;
                    }
            }
        });
        return out;
    }

    Tensor add(Tensor a, Tensor b) { return binary_ew("add", a, b); }
    Tensor sub(Tensor a, Tensor b) { return binary_ew("sub", a, b); }
    Tensor mul(Tensor a, Tensor b) { return binary_ew("mul", a, b); }

    Tensor relu(Tensor x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
        finish("relu", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            // subgradient 0 at exactly 0
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (x.values()[i] > 0.0) gx[i] += g[i];
        });
        return out;
    }

    Tensor tanh(Tensor x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = std::tanh(x.values()[i]);
        finish("tanh", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                double y = out.values()[i];
                gx[i] += g[i] * (1.0 - y * y);
            }
        });
        return out;
    }

    Tensor exp(Tensor x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = std::exp(x.values()[i]);
        finish("exp", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * out.values()[i];
        });
        return out;
    }

    Tensor log(Tensor x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!(x.values()[i] > 0.0))
                throw DomainError("log: non-positive operand " + std::to_string(x.values()[i]) + " at index " +
                                  std::to_string(i));
            out.values()[i] = std::log(x.values()[i]);
        }
        finish("log", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / x.values()[i];
        });
        return out;
    }

    Tensor scale(Tensor x, double c) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = c * x.values()[i];
        finish("scale", out, {x}, [x, out, c]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * g[i];
        });
        return out;
    }

    // m[i,j] + v[j]
    Tensor add_rowvec(Tensor m, Tensor v) {
        if (m.shape().size() != 2 || v.shape().size() != 1 || m.shape()[1] != v.shape()[0])
            throw DimensionError("add_rowvec: shapes " + shape_str(m.shape()) + " and " + shape_str(v.shape()));
        const std::size_t r = m.shape()[0], c = m.shape()[1];
        Tensor out = Tensor::zeros(m.shape());
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.values()[i * c + j] = m.values()[i * c + j] + v.values()[j];
        finish("add_rowvec", out, {m, v}, [m, v, out, r, c]() mutable {
            const std::vector<double>& g = out.grad();
            if (m.requires_grad()) {
                std::vector<double>& gm = m.grad();
                for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
            }
            if (v.requires_grad()) {
                std::vector<double>& gv = v.grad();
                for (std::size_t j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < r; ++i) acc += g[i * c + j];
                    gv[j] += acc;
                }
            }
        });
        return out;
    }

    Tensor sum(Tensor x) {
        double acc = 0.0;
        for (double v : x.values()) acc += v;
        Tensor out = Tensor::scalar(acc);
        finish("sum", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            double g = out.grad()[0];
            for (double& gi : gx) gi += g;
        });
        return out;
    }

    Tensor sum_sq(Tensor x) {
        double acc = 0.0;
        for (double v : x.values()) acc += v * v;
        Tensor out = Tensor::scalar(acc);
        finish("sum_sq", out, {x}, [x, out]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            double g = out.grad()[0];
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * x.values()[i] * g;
        });
        return out;
    }

    // copy of rows [r0, r1)
    Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1) {
        if (x.shape().size() != 2) throw DimensionError("slice_rows: operand must be 2-d");
        if (r0 >= r1 || r1 > x.shape()[0])
            throw IndexError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                             ") invalid for " + shape_str(x.shape()));
        const std::size_t c = x.shape()[1];
        Tensor out = Tensor::zeros({r1 - r0, c});
        for (std::size_t i = 0; i < (r1 - r0) * c; ++i) out.values()[i] = x.values()[r0 * c + i];
        finish("slice_rows", out, {x}, [x, out, r0, c]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[r0 * c + i] += g[i];
        });
        return out;
    }

    // single element as scalar
    Tensor select(Tensor x, std::size_t i, std::size_t j) {
        if (x.shape().size() != 2) throw DimensionError("select: operand must be 2-d");
        if (i >= x.shape()[0] || j >= x.shape()[1])
            throw IndexError("select: (" + std::to_string(i) + ", " + std::to_string(j) + ") outside " +
                             shape_str(x.shape()));
        const std::size_t c = x.shape()[1];
        Tensor out = Tensor::scalar(x.values()[i * c + j]);
        finish("select", out, {x}, [x, out, i, j, c]() mutable {
            if (!x.requires_grad()) return;
            x.grad()[i * c + j] += out.grad()[0];
        });
        return out;
    }

    // row-wise log softmax, stabilized by max subtraction
    Tensor log_softmax(Tensor x) {
        if (x.shape().size() != 2) throw DimensionError("log_softmax: operand must be 2-d");
        const std::size_t r = x.shape()[0], c = x.shape()[1];
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < r; ++i) {
            double mx = x.values()[i * c];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.values()[i * c + j]);
            double lse = 0.0;
            for (std::size_t j = 0; j < c; ++j) lse += std::exp(x.values()[i * c + j] - mx);
            lse = mx + std::log(lse);
            for (std::size_t j = 0; j < c; ++j) out.values()[i * c + j] = x.values()[i * c + j] - lse;
        }
        finish("log_softmax", out, {x}, [x, out, r, c]() mutable {
            if (!x.requires_grad()) return;
            std::vector<double>& gx = x.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < r; ++i) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    gx[i * c + j] += g[i * c + j] - std::exp(out.values()[i * c + j]) * gsum;
            }
        });
        return out;
    }

    // mean over the batch of -log softmax(logits)[target]
    Tensor softmax_cross_entropy(Tensor logits, std::vector<int> targets) {
        if (logits.shape().size() != 2) throw DimensionError("softmax_cross_entropy: logits must be 2-d");
        const std::size_t r = logits.shape()[0], c = logits.shape()[1];
        if (targets.size() != r)
            throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                 std::to_string(r) + " rows");
        for (std::size_t i = 0; i < r; ++i)
            if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
                throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                                 std::to_string(i) + " outside " + std::to_string(c) + " classes");
        // keep softmax for the backward rule
        auto probs = std::make_shared<std::vector<double>>(r * c);
        double loss = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double mx = logits.values()[i * c];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.values()[i * c + j]);
            double z = 0.0;
            for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.values()[i * c + j] - mx);
            double lse = mx + std::log(z);
            for (std::size_t j = 0; j < c; ++j)
                (*probs)[i * c + j] = std::exp(logits.values()[i * c + j] - lse);
            loss -= logits.values()[i * c + static_cast<std::size_t>(targets[i])] - lse;
        }
        Tensor out = Tensor::scalar(loss / static_cast<double>(r));
        finish("softmax_cross_entropy", out, {logits}, [logits, out, probs, targets, r, c]() mutable {
            if (!logits.requires_grad()) return;
            std::vector<double>& gx = logits.grad();
            double g = out.grad()[0] / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    double ind = (static_cast<std::size_t>(targets[i]) == j) ? 1.0 : 0.0;
                    gx[i * c + j] += g * ((*probs)[i * c + j] - ind);
                }
        });
        return out;
    }

    // mean over rows of (1 - cos(a_i, b_i)); rows with a vanishing norm
    // product fall back to the squared difference for that row
    Tensor cosine_distance_rows(Tensor a, Tensor b) {
        if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape() != b.shape())
            throw DimensionError("cosine_distance_rows: shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        const std::size_t r = a.shape()[0], c = a.shape()[1];
        constexpr double kNormFloor = 1e-30;
        double total = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double na = 0.0, nb = 0.0, dsq = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                double av = a.values()[i * c + j], bv = b.values()[i * c + j];
                na += av * av;
                nb += bv * bv;
                double d = av - bv;
                dsq += d * d;
            }
            double sa = std::sqrt(na), sb = std::sqrt(nb);
            double nprod = sa * sb;
            if (nprod <= kNormFloor) {
                total += dsq;
            } else {
                // 1 - cos == (|a-b|^2 - (|a|-|b|)^2) / (2 |a| |b|), exact 0 for identical rows
                total += (dsq - (sa - sb) * (sa - sb)) / (2.0 * nprod);
            }
        }
        Tensor out = Tensor::scalar(total / static_cast<double>(r));
        finish("cosine_distance_rows", out, {a, b}, [a, b, out, r, c]() mutable {
            constexpr double kNormFloor = 1e-30;
            const double g = out.grad()[0] / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    double av = a.values()[i * c + j], bv = b.values()[i * c + j];
                    dot += av * bv;
                    na += av * av;
                    nb += bv * bv;
                }
                double sa = std::sqrt(na), sb = std::sqrt(nb);
                double nprod = sa * sb;
                if (nprod <= kNormFloor) {
                    for (std::size_t j = 0; j < c; ++j) {
                        double d = a.values()[i * c + j] - b.values()[i * c + j];
                        if (a.requires_grad()) a.grad()[i * c + j] += g * 2.0 * d;
                        if (b.requires_grad()) b.grad()[i * c + j] += g * (-2.0) * d;
                    }
                } else {
                    for (std::size_t j = 0; j < c; ++j) {
                        double av = a.values()[i * c + j], bv = b.values()[i * c + j];
                        if (a.requires_grad())
                            a.grad()[i * c + j] += g * (-(bv / nprod - dot * av / (na * nprod)));
                        if (b.requires_grad())
                            b.grad()[i * c + j] += g * (-(av / nprod - dot * bv / (nb * nprod)));
                    }
                }
            }
        });
        return out;
    }

    // Reverse pass from a scalar loss. Node-output gradients are cleared
    // first, so repeating backward on the same loss accumulates leaf grads
    // exactly once more per call.
    void backward(Tensor loss) {
        if (!loss.defined() || !loss.is_scalar())
            throw ContractError("backward: loss must be a defined scalar tensor");
        if (!recording_) throw ContractError("backward: graph is not recording");
        bool attached = false;
        for (const Node& n : nodes_)
            if (n.out.same_storage(loss)) {
                attached = true;
                break;
            }
        if (!attached) throw ContractError("backward: loss is not attached to this graph");
        for (Node& n : nodes_) n.out.zero_grad();
        loss.grad()[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
        for (const Node& n : nodes_)
            for (const Tensor& in : n.inputs)
                if (in.requires_grad()) check_finite_grad(in);
    }

private:
    struct Node {
        std::string op;
        Tensor out;
        std::vector<Tensor> inputs;
        std::function<void()> back;
    };

    Tensor binary_ew(const char* name, Tensor a, Tensor b) {
        if (a.shape() != b.shape())
            throw DimensionError(std::string(name) + ": operand shapes differ: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        Tensor out = Tensor::zeros(a.shape());
        const std::string op = name;
        if (op == "add")
            for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
        else if (op == "sub")
            for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
        else
            for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
        finish(name, out, {a, b}, [op, a, b, out]() mutable {
            const std::vector<double>& g = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += (op == "mul") ? g[i] * b.values()[i] : g[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                for (std::size_t i = 0; i < gb.size(); ++i)
                    gb[i] += (op == "mul") ? g[i] * a.values()[i] : (op == "sub" ? -g[i] : g[i]);
            }
        });
        return out;
    }

    void finish(const char* op, Tensor& out, std::vector<Tensor> inputs, std::function<void()> back) {
        check_finite_values(out, op);
        if (!recording_) return;
        bool needs = false;
        for (const Tensor& in : inputs)
            if (in.requires_grad()) needs = true;
        if (!needs) return;
        out.set_requires_grad(true);
        nodes_.push_back(Node{op, out, std::move(inputs), std::move(back)});
    }

    static void check_finite_values(const Tensor& t, const char* op) {
        for (double v : t.values())
            if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in result");
    }

    static void check_finite_grad(const Tensor& t) {
        for (double v : t.grad())
            if (!std::isfinite(v)) throw NumericError("backward: non-finite gradient");
    }

    std::vector<Node> nodes_;
    bool recording_;
};

}  // namespace lifelong
