#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors.
//
// A Graph records every primitive application in creation order, so node ids
// are already a topological order. `backward` replays the record once in
// reverse. Parameters live outside the graph: `Graph::parameter` binds an
// external Tensor, and backward adds the node's gradient into that tensor's
// grad slot. A graph is built per minibatch and then discarded.

#include <cstddef>
#include <string_view>
#include <vector>

#include "sdvae/tensor.hpp"

namespace sdvae {

enum class Op {
    Leaf,
    MatMul,
    Add,        // same shape, or rhs is a 1 x cols row bias
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Softplus,
    SoftmaxRows,
    LogSoftmaxRows,
    Sum,
    Mean,
    RowSum,     // batch x n -> batch x 1
    SliceCols,
    ConcatCols,
};

std::string_view op_name(Op op) noexcept;

using NodeId = std::size_t;

class Graph;

// Lightweight handle to a node of a Graph. Valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    NodeId id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const;
    // Gradient of the last backward root with respect to this node.
    std::span<const double> grad() const;
    // Convenience for 1x1 nodes.
    double item() const;

private:
    Graph* graph_ = nullptr;
    NodeId id_ = 0;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf holding a copy of `value`; receives gradients but exports none.
    Var constant(Tensor value);
    // Leaf reading from `param`; backward accumulates into `param.grad()`.
    // `param` must outlive the graph's backward pass.
    Var parameter(Tensor& param);

    // Requires a 1x1 root. Resets node gradients, then propagates.
    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    Op op(NodeId id) const { return nodes_.at(id).op; }

    // Internal: used by the primitive functions below.
    Var record(Op op, Tensor value, std::initializer_list<NodeId> inputs, double scalar = 0.0,
               std::size_t begin = 0, std::size_t end = 0);

private:
    struct Node {
        Op op = Op::Leaf;
        NodeId inputs[2] = {0, 0};
        std::size_t n_inputs = 0;
        Tensor value;
        double scalar = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        Tensor* bound = nullptr;
    };

    void propagate(const Node& node, NodeId id);

    std::vector<Node> nodes_;
    friend class Var;
};

// Primitives. All inputs must belong to the same graph.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(Var a, Var b);

// Constant copy of `a`'s value: gradients stop here.
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace sdvae
