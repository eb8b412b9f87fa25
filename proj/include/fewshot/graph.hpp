#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

// Handle into a Graph's node tape.
struct Var {
    uint32_t id = 0xffffffff;
};

// Reverse-mode autodiff over a tape of eagerly-evaluated operations.
// Nodes are appended in construction order, which is a topological order
// by construction; backward() walks the tape once in reverse. A graph is
// single-threaded; distinct graphs share no state.
//
// Parameters live outside the graph as Tensor objects with requires_grad
// set. param() binds such a tensor by pointer: backward() accumulates the
// node's gradient into the bound tensor's grad buffer, so one parameter
// set can drive many short-lived graphs (one per episode or per step).
class Graph {
public:
    Var leaf(Tensor t) { return push(Op::leaf, {}, std::move(t)); }

    Var leaf(double scalar) { return push(Op::leaf, {}, Tensor::scalar(scalar)); }

    Var param(Tensor& t) {
        if (!t.requires_grad) {
            throw ConfigError("graph: param() requires a tensor marked trainable (make_param)");
        }
        Var v = push(Op::leaf, {}, t);
        nodes_[v.id].bound = &t;
        return v;
    }

    Var add(Var a, Var b) { return binary(Op::add, a, b); }
    Var sub(Var a, Var b) { return binary(Op::sub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::mul, a, b); }

    Var div(Var a, Var b) {
        const Tensor& tb = value(b);
        if (!value(a).shape.empty() && tb.is_scalar() && tb.data[0] == 0.0) {
            throw NumericError("graph: division by zero scalar");
        }
        return binary(Op::div, a, b);
    }

    Var scale(Var x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v *= c;
        Var r = push(Op::scale, {x.id}, std::move(out));
        nodes_[r.id].c = c;
        return r;
    }

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != 2 || tb.rank() != 2) {
            throw ShapeError("matmul: expects rank-2 tensors, got " + shape_str(ta.shape) +
                             " and " + shape_str(tb.shape));
        }
        if (ta.shape[1] != tb.shape[0]) {
            throw ShapeError("matmul: inner dimensions disagree: " + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
        }
        const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        Tensor out = Tensor::zeros({m, n});
        for (int i = 0; i < m; ++i) {
            for (int t = 0; t < k; ++t) {
                const double a_it = ta.data[idx2(i, t, k)];
                if (a_it == 0.0) continue;
                for (int j = 0; j < n; ++j) {
                    out.data[idx2(i, j, n)] += a_it * tb.data[idx2(t, j, n)];
                }
            }
        }
        return push(Op::matmul, {a.id, b.id}, std::move(out));
    }

    Var relu(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(Op::relu, {x.id}, std::move(out));
    }

    Var sigmoid(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return push(Op::sigmoid, {x.id}, std::move(out));
    }

    // Numerically stable softmax over a rank-1 tensor.
    Var softmax(Var x) {
        const Tensor& tx = value(x);
        if (tx.numel() < 1) throw ConfigError("softmax: empty input");
        Tensor out = tx;
        const double mx = *std::max_element(out.data.begin(), out.data.end());
        double total = 0.0;
        for (double& v : out.data) {
            v = std::exp(v - mx);
            total += v;
        }
        for (double& v : out.data) v /= total;
        return push(Op::softmax, {x.id}, std::move(out));
    }

    // ln(max(x, floor)); gradient is zero in the clamped region. NaN passes
    // through so the training divergence guard can see it.
    Var log_clamped(Var x, double floor = 1e-12) {
        Tensor out = value(x);
        for (double& v : out.data) {
            if (v < floor) v = floor;
            v = std::log(v);
        }
        Var r = push(Op::log_clamped, {x.id}, std::move(out));
        nodes_[r.id].c = floor;
        return r;
    }

    Var sqrt(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = std::sqrt(v);
        return push(Op::sqrt_op, {x.id}, std::move(out));
    }

    Var dot(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.numel() != tb.numel()) {
            throw ShapeError("dot: length mismatch: " + shape_str(ta.shape) + " vs " +
                             shape_str(tb.shape));
        }
        double acc = 0.0;
        for (int i = 0; i < ta.numel(); ++i) acc += ta.data[static_cast<size_t>(i)] * tb.data[static_cast<size_t>(i)];
        return push(Op::dot, {a.id, b.id}, Tensor::scalar(acc));
    }

    Var sum(Var x) {
        double acc = 0.0;
        for (double v : value(x).data) acc += v;
        return push(Op::sum, {x.id}, Tensor::scalar(acc));
    }

    Var mean(Var x) {
        const Tensor& tx = value(x);
        double acc = 0.0;
        for (double v : tx.data) acc += v;
        return push(Op::mean, {x.id}, Tensor::scalar(acc / tx.numel()));
    }

    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw ConfigError("concat: no inputs");
        std::vector<double> data;
        std::vector<uint32_t> ids;
        for (Var p : parts) {
            const Tensor& t = value(p);
            if (t.rank() > 1) {
                throw ShapeError("concat: expects rank-1 inputs, got " + shape_str(t.shape));
            }
            data.insert(data.end(), t.data.begin(), t.data.end());
            ids.push_back(p.id);
        }
        int n = static_cast<int>(data.size());
        return push(Op::concat, std::move(ids), Tensor({n}, std::move(data)));
    }

    // Drops the leading axis at `index`: [n]->scalar, [r,c]->[c], [h,d,d]->[d,d].
    Var slice0(Var x, int index) {
        const Tensor& tx = value(x);
        if (tx.rank() < 1 || index < 0 || index >= tx.shape[0]) {
            throw ShapeError("slice0: index " + std::to_string(index) + " out of range for " +
                             shape_str(tx.shape));
        }
        Shape out_shape(tx.shape.begin() + 1, tx.shape.end());
        if (out_shape.empty()) out_shape = {1};
        const int block = shape_numel(out_shape);
        std::vector<double> data(tx.data.begin() + static_cast<long>(index) * block,
                                 tx.data.begin() + static_cast<long>(index + 1) * block);
        Var r = push(Op::slice0, {x.id}, Tensor(std::move(out_shape), std::move(data)));
        nodes_[r.id].index = index;
        return r;
    }

    Var reshape(Var x, Shape target) {
        const Tensor& tx = value(x);
        if (shape_numel(target) != tx.numel()) {
            throw ShapeError("reshape: cannot view " + shape_str(tx.shape) + " as " +
                             shape_str(target));
        }
        return push(Op::reshape, {x.id}, Tensor(std::move(target), tx.data));
    }

    // Capsule squash: (|x|^2 / (1+|x|^2)) * x/|x|, with squash(0) = 0.
    // Maps any vector strictly inside the unit ball.
    Var squash(Var x) {
        const Tensor& tx = value(x);
        Tensor out = tx;
        const double r2 = sq_norm(tx.data);
        if (r2 == 0.0) {
            std::fill(out.data.begin(), out.data.end(), 0.0);
        } else {
            const double r = std::sqrt(r2);
            const double factor = r / (1.0 + r2);
            for (double& v : out.data) v *= factor;
        }
        return push(Op::squash, {x.id}, std::move(out));
    }

    // z_t = v^T M_t p for t in 0..h-1. v:[d], M:[h,d,d], p:[d] -> [h].
    Var ntl_bilinear(Var v, Var M, Var p) {
        const Tensor& tv = value(v);
        const Tensor& tM = value(M);
        const Tensor& tp = value(p);
        if (tM.rank() != 3 || tv.rank() != 1 || tp.rank() != 1 || tM.shape[1] != tv.numel() ||
            tM.shape[2] != tp.numel()) {
            throw ShapeError("ntl_bilinear: shapes do not chain: v " + shape_str(tv.shape) +
                             ", M " + shape_str(tM.shape) + ", p " + shape_str(tp.shape));
        }
        const int h = tM.shape[0], d1 = tM.shape[1], d2 = tM.shape[2];
        Tensor out = Tensor::zeros({h});
        for (int t = 0; t < h; ++t) {
            double acc = 0.0;
            const double* slab = tM.data.data() + static_cast<size_t>(t) * d1 * d2;
            for (int i = 0; i < d1; ++i) {
                double row = 0.0;
                for (int j = 0; j < d2; ++j) row += slab[i * d2 + j] * tp.data[static_cast<size_t>(j)];
                acc += tv.data[static_cast<size_t>(i)] * row;
            }
            out.data[static_cast<size_t>(t)] = acc;
        }
        return push(Op::ntl_bilinear, {v.id, M.id, p.id}, std::move(out));
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    // Node-local gradient; populated by the most recent backward().
    const std::vector<double>& grad(Var v) const { return nodes_.at(v.id).grad; }

    size_t node_count() const { return nodes_.size(); }

    bool all_values_finite() const {
        for (const auto& n : nodes_) {
            if (!all_finite(n.value)) return false;
        }
        return true;
    }

    // Reverse pass from a scalar loss. Every node is visited exactly once
    // in reverse tape order; gradients accumulate across fan-out, and
    // bound parameter tensors receive their gradient contributions.
    void backward(Var loss) {
        if (loss.id >= nodes_.size()) throw ConfigError("backward: unknown node");
        if (!nodes_[loss.id].value.is_scalar()) {
            throw ShapeError("backward: loss must be scalar, got " +
                             shape_str(nodes_[loss.id].value.shape));
        }
        for (auto& n : nodes_) n.grad.assign(n.value.data.size(), 0.0);
        nodes_[loss.id].grad[0] = 1.0;

        for (size_t pos = nodes_.size(); pos-- > 0;) {
            Node& n = nodes_[pos];
            if (n.op == Op::leaf) continue;
            propagate(n);
        }
        for (auto& n : nodes_) {
            if (n.bound != nullptr && n.bound->requires_grad) {
                for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
            }
        }
    }

private:
    enum class Op : uint8_t {
        leaf,
        add,
        sub,
        mul,
        div,
        scale,
        matmul,
        relu,
        sigmoid,
        softmax,
        log_clamped,
        sqrt_op,
        dot,
        sum,
        mean,
        concat,
        slice0,
        reshape,
        squash,
        ntl_bilinear,
    };

    struct Node {
        Op op;
        std::vector<uint32_t> in;
        Tensor value;
        std::vector<double> grad;
        Tensor* bound = nullptr;
        double c = 0.0;
        int index = 0;
    };

    static size_t idx2(int i, int j, int cols) {
        return static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j);
    }

    static double sq_norm(const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x * x;
        return acc;
    }

    Var push(Op op, std::vector<uint32_t> in, Tensor value) {
        nodes_.push_back(Node{op, std::move(in), std::move(value), {}, nullptr, 0.0, 0});
        return Var{static_cast<uint32_t>(nodes_.size() - 1)};
    }

    // Elementwise binary op with scalar broadcast on either side.
    Var binary(Op op, Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        const bool a_scalar = ta.is_scalar();
        const bool b_scalar = tb.is_scalar();
        if (!a_scalar && !b_scalar && ta.shape != tb.shape) {
            throw ShapeError(op_name(op) + std::string(": shape mismatch: ") + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
        }
        const Tensor& big = b_scalar ? ta : tb;
        Tensor out = Tensor::zeros(big.shape);
        const int n = out.numel();
        for (int i = 0; i < n; ++i) {
            const double x = ta.data[static_cast<size_t>(a_scalar ? 0 : i)];
            const double y = tb.data[static_cast<size_t>(b_scalar ? 0 : i)];
            switch (op) {
                case Op::add: out.data[static_cast<size_t>(i)] = x + y; break;
                case Op::sub: out.data[static_cast<size_t>(i)] = x - y; break;
                case Op::mul: out.data[static_cast<size_t>(i)] = x * y; break;
                case Op::div: out.data[static_cast<size_t>(i)] = x / y; break;
                default: break;
            }
        }
        return push(op, {a.id, b.id}, std::move(out));
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::add: return "add";
            case Op::sub: return "sub";
            case Op::mul: return "mul";
            case Op::div: return "div";
            default: return "op";
        }
    }

    void propagate(Node& n) {
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add:
            case Op::sub: {
                const double sign_b = n.op == Op::sub ? -1.0 : 1.0;
                accumulate_broadcast(n.in[0], g, [](size_t, double gi) { return gi; });
                accumulate_broadcast(n.in[1], g, [sign_b](size_t, double gi) { return sign_b * gi; });
                break;
            }
            case Op::mul: {
                const Tensor& ta = nodes_[n.in[0]].value;
                const Tensor& tb = nodes_[n.in[1]].value;
                accumulate_broadcast(n.in[0], g, [&](size_t i, double gi) {
                    return gi * tb.data[tb.is_scalar() ? 0 : i];
                });
                accumulate_broadcast(n.in[1], g, [&](size_t i, double gi) {
                    return gi * ta.data[ta.is_scalar() ? 0 : i];
                });
                break;
            }
            case Op::div: {
                const Tensor& ta = nodes_[n.in[0]].value;
                const Tensor& tb = nodes_[n.in[1]].value;
                accumulate_broadcast(n.in[0], g, [&](size_t i, double gi) {
                    return gi / tb.data[tb.is_scalar() ? 0 : i];
                });
                accumulate_broadcast(n.in[1], g, [&](size_t i, double gi) {
                    const double bv = tb.data[tb.is_scalar() ? 0 : i];
                    const double av = ta.data[ta.is_scalar() ? 0 : i];
                    return -gi * av / (bv * bv);
                });
                break;
            }
            case Op::scale: {
                auto& dst = nodes_[n.in[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) dst[i] += n.c * g[i];
                break;
            }
            case Op::matmul: {
                const Tensor& ta = nodes_[n.in[0]].value;
                const Tensor& tb = nodes_[n.in[1]].value;
                auto& da = nodes_[n.in[0]].grad;
                auto& db = nodes_[n.in[1]].grad;
                const int m = ta.shape[0], k = ta.shape[1], cols = tb.shape[1];
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < k; ++j) {
                        double acc = 0.0;
                        for (int t = 0; t < cols; ++t) acc += g[idx2(i, t, cols)] * tb.data[idx2(j, t, cols)];
                        da[idx2(i, j, k)] += acc;
                    }
                }
                for (int i = 0; i < k; ++i) {
                    for (int j = 0; j < cols; ++j) {
                        double acc = 0.0;
                        for (int t = 0; t < m; ++t) acc += ta.data[idx2(t, i, k)] * g[idx2(t, j, cols)];
                        db[idx2(i, j, cols)] += acc;
                    }
                }
                break;
            }
            case Op::relu: {
                const Tensor& tx = nodes_[n.in[0]].value;
                auto& dst = nodes_[n.in[0]].grad;
                // subgradient at exactly 0 is 0
                for (size_t i = 0; i < g.size(); ++i) dst[i] += tx.data[i] > 0.0 ? g[i] : 0.0;
                break;
            }
            case Op::sigmoid: {
                auto& dst = nodes_[n.in[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data[i];
                    dst[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::softmax: {
                auto& dst = nodes_[n.in[0]].grad;
                double inner = 0.0;
                for (size_t i = 0; i < g.size(); ++i) inner += g[i] * n.value.data[i];
                for (size_t i = 0; i < g.size(); ++i) dst[i] += n.value.data[i] * (g[i] - inner);
                break;
            }
            case Op::log_clamped: {
                const Tensor& tx = nodes_[n.in[0]].value;
                auto& dst = nodes_[n.in[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    if (tx.data[i] > n.c) dst[i] += g[i] / tx.data[i];
                }
                break;
            }
            case Op::sqrt_op: {
                auto& dst = nodes_[n.in[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data[i];
                    if (y > 0.0) dst[i] += g[i] / (2.0 * y);
                }
                break;
            }
            case Op::dot: {
                const Tensor& ta = nodes_[n.in[0]].value;
                const Tensor& tb = nodes_[n.in[1]].value;
                auto& da = nodes_[n.in[0]].grad;
                auto& db = nodes_[n.in[1]].grad;
                for (size_t i = 0; i < ta.data.size(); ++i) {
                    da[i] += g[0] * tb.data[i];
                    db[i] += g[0] * ta.data[i];
                }
                break;
            }
            case Op::sum: {
                auto& dst = nodes_[n.in[0]].grad;
                for (double& d : dst) d += g[0];
                break;
            }
            case Op::mean: {
                auto& dst = nodes_[n.in[0]].grad;
                const double share = g[0] / static_cast<double>(dst.size());
                for (double& d : dst) d += share;
                break;
            }
            case Op::concat: {
                size_t offset = 0;
                for (uint32_t id : n.in) {
                    auto& dst = nodes_[id].grad;
                    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[offset + i];
                    offset += dst.size();
                }
                break;
            }
            case Op::slice0: {
                auto& dst = nodes_[n.in[0]].grad;
                const size_t block = g.size();
                const size_t start = static_cast<size_t>(n.index) * block;
                for (size_t i = 0; i < block; ++i) dst[start + i] += g[i];
                break;
            }
            case Op::reshape: {
                auto& dst = nodes_[n.in[0]].grad;
                for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                break;
            }
            case Op::squash: {
                const Tensor& tx = nodes_[n.in[0]].value;
                auto& dst = nodes_[n.in[0]].grad;
                const double r2 = sq_norm(tx.data);
                if (r2 == 0.0) break;  // subgradient at the origin: 0
                const double r = std::sqrt(r2);
                const double k1 = r / (1.0 + r2);                              // g(r)
                const double gp = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2));      // g'(r)
                double xu = 0.0;
                for (size_t i = 0; i < g.size(); ++i) xu += tx.data[i] * g[i];
                const double k2 = gp / r * xu;
                for (size_t i = 0; i < g.size(); ++i) dst[i] += k1 * g[i] + k2 * tx.data[i];
                break;
            }
            case Op::ntl_bilinear: {
                const Tensor& tv = nodes_[n.in[0]].value;
                const Tensor& tM = nodes_[n.in[1]].value;
                const Tensor& tp = nodes_[n.in[2]].value;
                auto& dv = nodes_[n.in[0]].grad;
                auto& dM = nodes_[n.in[1]].grad;
                auto& dp = nodes_[n.in[2]].grad;
                const int h = tM.shape[0], d1 = tM.shape[1], d2 = tM.shape[2];
                for (int t = 0; t < h; ++t) {
                    const double gt = g[static_cast<size_t>(t)];
                    if (gt == 0.0) continue;
                    const double* slab = tM.data.data() + static_cast<size_t>(t) * d1 * d2;
                    double* dslab = dM.data() + static_cast<size_t>(t) * d1 * d2;
                    for (int i = 0; i < d1; ++i) {
                        const double vi = tv.data[static_cast<size_t>(i)];
                        double mp = 0.0;
                        for (int j = 0; j < d2; ++j) {
                            const double pj = tp.data[static_cast<size_t>(j)];
                            mp += slab[i * d2 + j] * pj;
                            dslab[i * d2 + j] += gt * vi * pj;
                            dp[static_cast<size_t>(j)] += gt * vi * slab[i * d2 + j];
                        }
                        dv[static_cast<size_t>(i)] += gt * mp;
                    }
                }
                break;
            }
        }
    }

    template <typename Fn>
    void accumulate_broadcast(uint32_t input_id, const std::vector<double>& g, Fn&& per_element) {
        Node& src = nodes_[input_id];
        if (src.value.is_scalar() && g.size() > 1) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += per_element(i, g[i]);
            src.grad[0] += acc;
        } else {
            for (size_t i = 0; i < g.size(); ++i) src.grad[i] += per_element(i, g[i]);
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace fewshot
