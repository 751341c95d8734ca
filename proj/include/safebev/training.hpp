#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/loss.hpp"
#include "safebev/network.hpp"
#include "safebev/safety_spec.hpp"

namespace safebev {

enum class TrainStage { baseline, harden_v1, harden_v2 };

const char* to_string(TrainStage s);
TrainStage train_stage_from_string(const std::string& s);

struct TrainConfig {
    TrainStage stage = TrainStage::baseline;
    /// Feature perturbation radius; positive exactly for harden_v2.
    double xi = 0.0;
    double learning_rate = 0.01;
    std::size_t epochs = 10;
    std::size_t batch_size = 1;
    std::uint64_t seed = 1;
    LossOptions loss;

    void validate() const;
};

/// One training example: input occupancy tensor and its label grid.
struct Sample {
    Tensor input;
    LabelGrid labels;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parameter tensors keyed "<group>.<index>.weights|bias", e.g.
/// "critical.trunk.0.weights" or "backbone.2.bias".
using GradientMap = std::map<std::string, Tensor>;

struct GradientResult {
    /// Mean per-sample loss over the batch.
    double loss = 0.0;
    GradientMap grads;
};

/// Names of the parameters the stage updates.
std::vector<std::string> trainable_parameters(const Network& net, TrainStage stage);

/// Every parameter name in the network.
std::vector<std::string> all_parameters(const Network& net);

Tensor& parameter(Network& net, const std::string& name);
const Tensor& parameter(const Network& net, const std::string& name);

/// Loss of the stage on one sample, evaluated with plain forward passes
/// (no tape). Baseline: baseline loss of the non-critical (baseline) header
/// over all cells. harden_v1: tolerance loss of the critical header over
/// critical cells. harden_v2: robust loss at cfg.xi over critical cells.
double sample_loss(const Network& net, const Sample& s, const TrainConfig& cfg, const SafetySpec& spec,
                   const GridSpec& grid);

/// Mean of sample_loss over a batch, reduced in fixed pairwise order.
double batch_loss(const Network& net, std::span<const Sample> batch, const TrainConfig& cfg,
                  const SafetySpec& spec, const GridSpec& grid);

/// Reverse-mode gradients of batch_loss w.r.t. the stage's trainable parameters.
GradientResult gradients(const Network& net, std::span<const Sample> batch, const TrainConfig& cfg,
                         const SafetySpec& spec, const GridSpec& grid);

struct TrainResult {
    Network net;
    /// Mean per-sample loss of each epoch, accumulated during the pass.
    std::vector<double> history;
};

/// Plain SGD. Baseline updates the backbone and the baseline header, which is
/// then copied into both headers. Hardening stages clone the baseline header
/// into the critical header (once), then update only the critical header.
TrainResult train(Network net, std::span<const Sample> samples, const TrainConfig& cfg, const SafetySpec& spec,
                  const GridSpec& grid);

}  // namespace safebev
