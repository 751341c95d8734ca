#include "safebev/autodiff.hpp"

#include <cmath>

namespace safebev::ad {

namespace {

bool all_finite(const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void add_into(Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) {
        dst = src;
        return;
    }
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
}

}  // namespace

NodeId Tape::push(Node n) {
    check_finite(n);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

void Tape::check_finite(const Node& n) const {
    if (!all_finite(n.value.lower) || (n.value.interval && !all_finite(n.value.upper))) {
        throw NumericError("non-finite value produced by " + (n.label.empty() ? std::string("input") : n.label));
    }
}

NodeId Tape::input(Tensor x) {
    Node n;
    n.value.lower = std::move(x);
    return push(std::move(n));
}

NodeId Tape::input(IntervalTensor x) {
    Node n;
    n.value = {std::move(x.lower), std::move(x.upper), true};
    return push(std::move(n));
}

NodeId Tape::layer(NodeId x, const Layer& layer, ParamGrads* grads, std::string label) {
    const NodeValue& in = nodes_.at(x).value;
    Node n;
    n.op = Op::layer;
    n.inputs = {x};
    n.layer = &layer;
    n.param_grads = layer.has_parameters() ? grads : nullptr;
    n.label = std::move(label);
    if (in.interval) {
        IntervalTensor y = apply_layer_interval(layer, IntervalTensor(in.lower, in.upper));
        n.value = {std::move(y.lower), std::move(y.upper), true};
    } else {
        n.value.lower = apply_layer(layer, in.lower);
    }
    return push(std::move(n));
}

NodeId Tape::widen(NodeId x, double xi) {
    const NodeValue& in = nodes_.at(x).value;
    if (in.interval) throw std::invalid_argument("widen: input is already an interval");
    Node n;
    n.op = Op::widen;
    n.inputs = {x};
    n.label = "widen";
    IntervalTensor w = IntervalTensor::widened(in.lower, xi);
    n.value = {std::move(w.lower), std::move(w.upper), true};
    return push(std::move(n));
}

NodeId Tape::loss(std::vector<NodeId> inputs, const LossFn& fn, std::string label) {
    std::vector<const NodeValue*> values;
    for (NodeId id : inputs) values.push_back(&nodes_.at(id).value);
    LossEval e = fn(values);
    if (e.grad_lower.size() != inputs.size()) throw std::logic_error("loss: gradient count mismatch");
    Node n;
    n.op = Op::loss;
    n.inputs = std::move(inputs);
    n.label = std::move(label);
    n.value.lower = Tensor({1}, e.value);
    n.loss_grad_lower = std::move(e.grad_lower);
    n.loss_grad_upper = std::move(e.grad_upper);
    return push(std::move(n));
}

void Tape::backward(NodeId root) {
    for (auto& n : nodes_) {
        n.grad_lower = Tensor(n.value.lower.shape());
        if (n.value.interval) n.grad_upper = Tensor(n.value.upper.shape());
    }
    nodes_.at(root).grad_lower.fill(1.0);
    for (std::size_t idx = root + 1; idx-- > 0;) {
        Node& n = nodes_[idx];
        switch (n.op) {
        case Op::input:
            break;
        case Op::widen: {
            Node& src = nodes_[n.inputs[0]];
            add_into(src.grad_lower, n.grad_lower);
            add_into(src.grad_lower, n.grad_upper);
            break;
        }
        case Op::layer: {
            Node& src = nodes_[n.inputs[0]];
            Tensor* gw = n.param_grads ? &n.param_grads->weights : nullptr;
            Tensor* gb = n.param_grads ? &n.param_grads->bias : nullptr;
            if (n.value.interval) {
                BoundGrads gx{Tensor(src.value.lower.shape()), Tensor(src.value.lower.shape())};
                layer_backward_interval(*n.layer, IntervalTensor(src.value.lower, src.value.upper),
                                        IntervalTensor(n.value.lower, n.value.upper),
                                        BoundGrads{n.grad_lower, n.grad_upper}, &gx, gw, gb);
                add_into(src.grad_lower, gx.lower);
                add_into(src.grad_upper, gx.upper);
            } else {
                Tensor gx(src.value.lower.shape());
                layer_backward(*n.layer, src.value.lower, n.value.lower, n.grad_lower, &gx, gw, gb);
                add_into(src.grad_lower, gx);
            }
            if ((gw && !all_finite(*gw)) || (gb && !all_finite(*gb)) || !all_finite(src.grad_lower)) {
                throw NumericError("non-finite gradient in " + n.label);
            }
            break;
        }
        case Op::loss: {
            const double seed = n.grad_lower[0];
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node& src = nodes_[n.inputs[k]];
                for (std::size_t q = 0; q < src.grad_lower.size(); ++q) {
                    src.grad_lower[q] += seed * n.loss_grad_lower[k][q];
                }
                if (src.value.interval) {
                    for (std::size_t q = 0; q < src.grad_upper.size(); ++q) {
                        src.grad_upper[q] += seed * n.loss_grad_upper[k][q];
                    }
                }
            }
            break;
        }
        }
    }
}

}  // namespace safebev::ad
