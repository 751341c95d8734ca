#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safebev/network.hpp"
#include "safebev/tensor.hpp"

namespace safebev::ad {

/// Raised when a forward value or a gradient becomes NaN or infinite.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gradient buffers for one parameterized layer.
struct ParamGrads {
    Tensor weights;
    Tensor bias;
};

using NodeId = std::size_t;

/// Value of a tape node: a point tensor, or an interval when `interval` is set
/// (then `upper` holds the upper bound and `lower` the lower bound).
struct NodeValue {
    Tensor lower;
    Tensor upper;
    bool interval = false;
};

/// Result of a scalar loss head: the value and the gradients w.r.t. each
/// input node (lower/upper split for interval inputs).
struct LossEval {
    double value = 0.0;
    std::vector<Tensor> grad_lower;
    std::vector<Tensor> grad_upper;
};

using LossFn = std::function<LossEval(const std::vector<const NodeValue*>&)>;

/// Reverse-mode tape over whole-layer operations. Nodes are appended in
/// evaluation order; backward() sweeps them in reverse, pushing gradients into
/// input nodes and into caller-owned parameter buffers.
class Tape {
public:
    NodeId input(Tensor x);
    NodeId input(IntervalTensor x);

    /// Applies `layer` (exact or interval, following the input node). The layer
    /// must outlive backward(). `grads` may be null for frozen layers.
    NodeId layer(NodeId x, const Layer& layer, ParamGrads* grads, std::string label);

    /// Interval [x - xi, x + xi] around a point node.
    NodeId widen(NodeId x, double xi);

    /// Scalar loss over several nodes.
    NodeId loss(std::vector<NodeId> inputs, const LossFn& fn, std::string label);

    [[nodiscard]] const NodeValue& value(NodeId id) const { return nodes_.at(id).value; }
    [[nodiscard]] double scalar(NodeId id) const { return nodes_.at(id).value.lower[0]; }

    /// Seeds d(root)/d(root) = 1 and propagates to every node and parameter buffer.
    void backward(NodeId root);

    /// Gradient reaching a node after backward(); lower part for interval nodes.
    [[nodiscard]] const Tensor& grad(NodeId id) const { return nodes_.at(id).grad_lower; }
    [[nodiscard]] const Tensor& grad_upper(NodeId id) const { return nodes_.at(id).grad_upper; }

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    enum class Op { input, layer, widen, loss };

    struct Node {
        Op op = Op::input;
        NodeValue value;
        std::vector<NodeId> inputs;
        const Layer* layer = nullptr;
        ParamGrads* param_grads = nullptr;
        std::vector<Tensor> loss_grad_lower;
        std::vector<Tensor> loss_grad_upper;
        std::string label;
        Tensor grad_lower;
        Tensor grad_upper;
    };

    NodeId push(Node n);
    void check_finite(const Node& n) const;

    std::vector<Node> nodes_;
};

}  // namespace safebev::ad
