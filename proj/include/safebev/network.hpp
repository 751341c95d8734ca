#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/safety_spec.hpp"
#include "safebev/tensor.hpp"

namespace safebev {

enum class LayerKind { dense, conv2d, relu, sigmoid };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// One network layer. Convolution weights are (out, in, kh, kw); dense
/// weights are (out, in) and act on the flattened input.
struct Layer {
    LayerKind kind = LayerKind::relu;
    Tensor weights;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    [[nodiscard]] bool has_parameters() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    void validate() const;

    static Layer conv2d(Tensor w, Tensor b, std::size_t stride = 1, std::size_t padding = 0);
    static Layer dense(Tensor w, Tensor b);
    static Layer relu() { return Layer{LayerKind::relu, {}, {}, 1, 0}; }
    static Layer sigmoid() { return Layer{LayerKind::sigmoid, {}, {}, 1, 0}; }

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Output shape of a layer applied to an input of shape `in`.
std::vector<std::size_t> output_shape(const Layer& layer, const std::vector<std::size_t>& in);

Tensor apply_layer(const Layer& layer, const Tensor& x);

/// Interval propagation: nonnegative weights pair lower with lower, negative
/// weights pair lower with upper. With lower == upper the result equals
/// apply_layer bit for bit.
IntervalTensor apply_layer_interval(const Layer& layer, const IntervalTensor& x);

/// Gradients of a layer given the upstream gradient `gy` of its output `y`.
/// Null outputs are skipped; non-null ones are accumulated into.
void layer_backward(const Layer& layer, const Tensor& x, const Tensor& y, const Tensor& gy, Tensor* gx,
                    Tensor* gw, Tensor* gb);

/// Gradients w.r.t. the lower and upper parts of an interval value. Unlike the
/// bounds themselves these carry no ordering constraint.
struct BoundGrads {
    Tensor lower;
    Tensor upper;
};

void layer_backward_interval(const Layer& layer, const IntervalTensor& x, const IntervalTensor& y,
                             const BoundGrads& gy, BoundGrads* gx, Tensor* gw, Tensor* gb);

Tensor run_layers(const std::vector<Layer>& layers, Tensor x);
IntervalTensor run_layers_interval(const std::vector<Layer>& layers, IntervalTensor x);

/// Header network: a shared trunk followed by a classification branch that
/// must end in a sigmoid (one channel) and a linear regression branch (six channels).
struct Header {
    std::vector<Layer> trunk;
    std::vector<Layer> cls;
    std::vector<Layer> reg;

    friend bool operator==(const Header&, const Header&) = default;
};

struct Network {
    std::vector<Layer> backbone;
    Header critical;
    Header noncritical;
    /// Index of the critical-header trunk layer at whose input the feature
    /// perturbation enters; 0 is the header entry.
    std::size_t perturbation_index = 0;
    bool baseline_trained = false;
    bool hardened = false;

    friend bool operator==(const Network&, const Network&) = default;
};

struct NetworkShape {
    std::size_t backbone_channels = 8;
    std::size_t header_channels = 16;
};

/// Desk-scale detector: two conv+relu backbone blocks whose strides multiply to
/// the grid's downscale, and headers of two 3x3 conv+relu blocks followed by
/// 1x1 classification (sigmoid) and regression heads. Weights use He-uniform
/// initialization from `seed`; both headers start identical.
Network make_detector(const GridSpec& grid, const NetworkShape& shape, std::uint64_t seed);

/// Head outputs of a header at one resolution: cls (1,R,C) and reg (6,R,C).
struct HeadOutputs {
    Tensor cls;
    Tensor reg;
};

struct IntervalHeadOutputs {
    IntervalTensor cls;
    IntervalTensor reg;
};

/// Runs trunk layers [from, end) and both heads on `features`.
HeadOutputs run_header(const Header& h, Tensor features, std::size_t from, std::size_t rows, std::size_t cols);
IntervalHeadOutputs run_header_interval(const Header& h, IntervalTensor features, std::size_t from,
                                        std::size_t rows, std::size_t cols);

/// Reshapes a head output to (channels, rows, cols), accepting flat dense outputs.
Tensor as_grid(Tensor t, std::size_t channels, std::size_t rows, std::size_t cols);

PredictionGrid to_prediction_grid(const HeadOutputs& heads, std::size_t rows, std::size_t cols);

struct DetectorOutput {
    PredictionGrid critical;
    PredictionGrid noncritical;
};

/// Backbone output for `input`.
Tensor backbone_features(const Network& net, const Tensor& input);

/// Critical-header features at the perturbation point.
Tensor perturbation_features(const Network& net, const Tensor& input);

/// Exact forward pass. The critical grid owns exactly the cells in `mask`, the
/// non-critical grid owns the rest.
DetectorOutput forward_exact(const Network& net, const Tensor& input, const CriticalMask& mask);

/// Critical-header bounds when every feature at the perturbation point may move
/// by at most `xi` in the infinity norm.
IntervalPredictionGrid forward_interval(const Network& net, const Tensor& input, double xi,
                                        const CriticalMask& mask);

/// Same, starting from precomputed perturbation-point features.
IntervalPredictionGrid forward_interval_from_features(const Network& net, const Tensor& features, double xi,
                                                      const CriticalMask& mask);

/// Critical-header prediction from (possibly perturbed) perturbation-point features.
PredictionGrid critical_from_features(const Network& net, const Tensor& features, const CriticalMask& mask);

void save_checkpoint(const Network& net, std::ostream& os);
Network load_checkpoint(std::istream& is);
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace safebev
