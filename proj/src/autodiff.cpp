#include "sdvae/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap view(const Tensor& t) { return ConstMap(t.values().data(), t.rows(), t.cols()); }
ConstMap grad_view(const Tensor& t) { return ConstMap(t.grad().data(), t.rows(), t.cols()); }
MutMap grad_view(Tensor& t) { return MutMap(t.grad().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_mismatch(Op op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.str() + " and " + b.str());
}

Graph& same_graph(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw UsageError("operands belong to different graphs");
    return a.graph();
}

template <class F>
Tensor map_values(const Tensor& in, F f) {
    Tensor out(in.rows(), in.cols());
    auto src = in.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

std::string_view op_name(Op op) noexcept {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Softplus: return "softplus";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LogSoftmaxRows: return "log_softmax_rows";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSum: return "row_sum";
        case Op::SliceCols: return "slice_cols";
        case Op::ConcatCols: return "concat_cols";
    }
    return "?";
}

const Tensor& Var::value() const { return graph_->nodes_.at(id_).value; }
const Shape& Var::shape() const { return value().shape(); }
std::span<const double> Var::grad() const { return value().grad(); }
double Var::item() const { return value().item(); }

Var Graph::constant(Tensor value) { return record(Op::Leaf, std::move(value), {}); }

Var Graph::parameter(Tensor& param) {
    Var v = record(Op::Leaf, param, {});
    nodes_.back().bound = &param;
    return v;
}

Var Graph::record(Op op, Tensor value, std::initializer_list<NodeId> inputs, double scalar, std::size_t begin,
                  std::size_t end) {
    const NodeId id = nodes_.size();
    if (!value.all_finite())
        throw NumericError(std::string(op_name(op)) + ": non-finite output at node " + std::to_string(id));
    Node node;
    node.op = op;
    node.n_inputs = inputs.size();
    std::size_t i = 0;
    for (NodeId in : inputs) {
        if (in >= id) throw InternalError("graph record is not topological at node " + std::to_string(id));
        node.inputs[i++] = in;
    }
    node.value = std::move(value);
    node.value.zero_grad();
    node.scalar = scalar;
    node.begin = begin;
    node.end = end;
    nodes_.push_back(std::move(node));
    return Var(this, id);
}

void Graph::backward(Var root) {
    if (&root.graph() != this) throw UsageError("backward root belongs to another graph");
    const Tensor& rv = nodes_.at(root.id()).value;
    if (rv.size() != 1) throw UsageError("backward root must be scalar, got " + rv.shape().str());
    for (auto& n : nodes_) n.value.zero_grad();
    nodes_[root.id()].value.grad()[0] = 1.0;
    // Ids are creation order, so descending order visits consumers before producers.
    for (NodeId id = root.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        for (std::size_t k = 0; k < node.n_inputs; ++k)
            if (node.inputs[k] >= id) throw InternalError("cycle in graph record at node " + std::to_string(id));
        propagate(node, id);
    }
    for (auto& n : nodes_) {
        if (n.bound == nullptr) continue;
        auto src = n.value.grad();
        auto dst = n.bound->grad();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
}

void Graph::propagate(const Node& node, NodeId /*id*/) {
    const Tensor& out = node.value;
    auto g = out.grad();
    auto y = out.values();
    auto input = [&](std::size_t k) -> Tensor& { return nodes_[node.inputs[k]].value; };

    switch (node.op) {
        case Op::Leaf:
            return;
        case Op::MatMul: {
            Tensor& a = input(0);
            Tensor& b = input(1);
            grad_view(a).noalias() += grad_view(out) * view(b).transpose();
            grad_view(b).noalias() += view(a).transpose() * grad_view(out);
            return;
        }
        case Op::Add:
        case Op::Sub: {
            Tensor& a = input(0);
            Tensor& b = input(1);
            const double sign = node.op == Op::Add ? 1.0 : -1.0;
            auto ga = a.grad();
            auto gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (b.shape() == a.shape()) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
            } else {
                for (std::size_t r = 0; r < out.rows(); ++r)
                    for (std::size_t c = 0; c < out.cols(); ++c) gb[c] += sign * g[r * out.cols() + c];
            }
            return;
        }
        case Op::Mul: {
            Tensor& a = input(0);
            Tensor& b = input(1);
            auto ga = a.grad();
            auto gb = b.grad();
            auto va = a.values();
            auto vb = b.values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * vb[i];
                gb[i] += g[i] * va[i];
            }
            return;
        }
        case Op::Scale: {
            auto ga = input(0).grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.scalar * g[i];
            return;
        }
        case Op::AddScalar: {
            auto ga = input(0).grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            return;
        }
        case Op::Sigmoid: {
            auto ga = input(0).grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            return;
        }
        case Op::Tanh: {
            auto ga = input(0).grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            return;
        }
        case Op::Relu: {
            auto ga = input(0).grad();
            auto x = input(0).values();
            // Subgradient 0 at exactly x == 0.
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
            return;
        }
        case Op::Exp: {
            auto ga = input(0).grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            return;
        }
        case Op::Log: {
            auto ga = input(0).grad();
            auto x = input(0).values();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            return;
        }
        case Op::Softplus: {
            auto ga = input(0).grad();
            auto x = input(0).values();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * stable_sigmoid(x[i]);
            return;
        }
        case Op::SoftmaxRows: {
            // Jacobian-vector product: dx = y * (g - <g, y>) per row.
            auto ga = input(0).grad();
            const std::size_t cols = out.cols();
            for (std::size_t r = 0; r < out.rows(); ++r) {
                const std::size_t o = r * cols;
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
                for (std::size_t c = 0; c < cols; ++c) ga[o + c] += y[o + c] * (g[o + c] - dot);
            }
            return;
        }
        case Op::LogSoftmaxRows: {
            auto ga = input(0).grad();
            const std::size_t cols = out.cols();
            for (std::size_t r = 0; r < out.rows(); ++r) {
                const std::size_t o = r * cols;
                double total = 0.0;
                for (std::size_t c = 0; c < cols; ++c) total += g[o + c];
                for (std::size_t c = 0; c < cols; ++c) ga[o + c] += g[o + c] - std::exp(y[o + c]) * total;
            }
            return;
        }
        case Op::Sum:
        case Op::Mean: {
            auto ga = input(0).grad();
            const double d = node.op == Op::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
            for (double& v : ga) v += d;
            return;
        }
        case Op::RowSum: {
            Tensor& a = input(0);
            auto ga = a.grad();
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t c = 0; c < a.cols(); ++c) ga[r * a.cols() + c] += g[r];
            return;
        }
        case Op::SliceCols: {
            Tensor& a = input(0);
            auto ga = a.grad();
            const std::size_t width = node.end - node.begin;
            for (std::size_t r = 0; r < a.rows(); ++r)
                for (std::size_t c = 0; c < width; ++c) ga[r * a.cols() + node.begin + c] += g[r * width + c];
            return;
        }
        case Op::ConcatCols: {
            Tensor& a = input(0);
            Tensor& b = input(1);
            auto ga = a.grad();
            auto gb = b.grad();
            const std::size_t cols = out.cols();
            for (std::size_t r = 0; r < out.rows(); ++r) {
                for (std::size_t c = 0; c < a.cols(); ++c) ga[r * a.cols() + c] += g[r * cols + c];
                for (std::size_t c = 0; c < b.cols(); ++c) gb[r * b.cols() + c] += g[r * cols + a.cols() + c];
            }
            return;
        }
    }
    throw InternalError("unknown op in graph record");
}

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.cols() != vb.rows()) shape_mismatch(Op::MatMul, va.shape(), vb.shape());
    Tensor out(va.rows(), vb.cols());
    MutMap(out.values().data(), out.rows(), out.cols()).noalias() = view(va) * view(vb);
    return g.record(Op::MatMul, std::move(out), {a.id(), b.id()});
}

namespace {

Var add_or_sub(Op op, Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    const bool row_bias = vb.rows() == 1 && vb.cols() == va.cols() && va.rows() != 1;
    if (!(va.shape() == vb.shape()) && !row_bias) shape_mismatch(op, va.shape(), vb.shape());
    const double sign = op == Op::Add ? 1.0 : -1.0;
    Tensor out(va.rows(), va.cols());
    for (std::size_t r = 0; r < va.rows(); ++r)
        for (std::size_t c = 0; c < va.cols(); ++c)
            out(r, c) = va(r, c) + sign * (row_bias ? vb(0, c) : vb(r, c));
    return g.record(op, std::move(out), {a.id(), b.id()});
}

template <class F>
Var unary(Op op, Var a, F f, double scalar = 0.0) {
    return a.graph().record(op, map_values(a.value(), f), {a.id()}, scalar);
}

}  // namespace

Var add(Var a, Var b) { return add_or_sub(Op::Add, a, b); }
Var sub(Var a, Var b) { return add_or_sub(Op::Sub, a, b); }

Var mul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (!(va.shape() == vb.shape())) shape_mismatch(Op::Mul, va.shape(), vb.shape());
    Tensor out(va.rows(), va.cols());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
    return g.record(Op::Mul, std::move(out), {a.id(), b.id()});
}

Var scale(Var a, double s) {
    return unary(Op::Scale, a, [s](double x) { return s * x; }, s);
}
Var add_scalar(Var a, double s) {
    return unary(Op::AddScalar, a, [s](double x) { return x + s; }, s);
}
Var sigmoid(Var a) { return unary(Op::Sigmoid, a, stable_sigmoid); }
Var tanh(Var a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
Var relu(Var a) { return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
Var exp(Var a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }

Var log(Var a) {
    for (double x : a.value().values())
        if (!(x > 0.0))
            throw DomainError("log: non-positive input " + std::to_string(x) + " at node " + std::to_string(a.id()));
    return unary(Op::Log, a, [](double x) { return std::log(x); });
}

Var softplus(Var a) { return unary(Op::Softplus, a, stable_softplus); }

namespace {

Tensor row_log_softmax(const Tensor& in) {
    Tensor out(in.rows(), in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        double m = in(r, 0);
        for (std::size_t c = 1; c < in.cols(); ++c) m = std::max(m, in(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < in.cols(); ++c) s += std::exp(in(r, c) - m);
        const double lse = m + std::log(s);
        for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(r, c) - lse;
    }
    return out;
}

}  // namespace

Var softmax_rows(Var a) {
    const Tensor& in = a.value();
    Tensor out(in.rows(), in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        double m = in(r, 0);
        for (std::size_t c = 1; c < in.cols(); ++c) m = std::max(m, in(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < in.cols(); ++c) {
            out(r, c) = std::exp(in(r, c) - m);
            s += out(r, c);
        }
        for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) /= s;
    }
    return a.graph().record(Op::SoftmaxRows, std::move(out), {a.id()});
}

Var log_softmax_rows(Var a) { return a.graph().record(Op::LogSoftmaxRows, row_log_softmax(a.value()), {a.id()}); }

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    return a.graph().record(Op::Sum, Tensor::scalar(s), {a.id()});
}

Var mean(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    return a.graph().record(Op::Mean, Tensor::scalar(s / static_cast<double>(a.value().size())), {a.id()});
}

Var row_sum(Var a) {
    const Tensor& in = a.value();
    Tensor out(in.rows(), 1);
    for (std::size_t r = 0; r < in.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < in.cols(); ++c) s += in(r, c);
        out(r, 0) = s;
    }
    return a.graph().record(Op::RowSum, std::move(out), {a.id()});
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& in = a.value();
    if (begin >= end || end > in.cols())
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                         in.shape().str());
    Tensor out(in.rows(), end - begin);
    for (std::size_t r = 0; r < in.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = in(r, c);
    return a.graph().record(Op::SliceCols, std::move(out), {a.id()}, 0.0, begin, end);
}

Var concat_cols(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.rows() != vb.rows()) shape_mismatch(Op::ConcatCols, va.shape(), vb.shape());
    Tensor out(va.rows(), va.cols() + vb.cols());
    for (std::size_t r = 0; r < va.rows(); ++r) {
        for (std::size_t c = 0; c < va.cols(); ++c) out(r, c) = va(r, c);
        for (std::size_t c = 0; c < vb.cols(); ++c) out(r, va.cols() + c) = vb(r, c);
    }
    return g.record(Op::ConcatCols, std::move(out), {a.id(), b.id()});
}

Var detach(Var a) { return a.graph().constant(a.value()); }

}  // namespace sdvae
