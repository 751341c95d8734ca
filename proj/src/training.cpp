#include "safebev/training.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "safebev/autodiff.hpp"
#include "safebev/random.hpp"

namespace safebev {

const char* to_string(TrainStage s) {
    switch (s) {
    case TrainStage::baseline: return "baseline";
    case TrainStage::harden_v1: return "harden-v1";
    case TrainStage::harden_v2: return "harden-v2";
    }
    return "?";
}

TrainStage train_stage_from_string(const std::string& s) {
    if (s == "baseline") return TrainStage::baseline;
    if (s == "harden-v1") return TrainStage::harden_v1;
    if (s == "harden-v2") return TrainStage::harden_v2;
    throw std::invalid_argument("unknown training stage '" + s + "' (expected baseline, harden-v1 or harden-v2)");
}

void TrainConfig::validate() const {
    if ((stage == TrainStage::harden_v2) != (xi > 0.0)) {
        throw std::invalid_argument("TrainConfig: xi must be positive exactly for harden-v2");
    }
    if (!(xi >= 0.0) || !std::isfinite(xi)) throw std::invalid_argument("TrainConfig: xi must be finite");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    }
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
}

namespace {

constexpr double kDivergenceLimit = 1e6;

// Visits every layer with its parameter-name prefix.
template <class NetT, class Fn>
void for_each_layer(NetT& net, Fn&& fn) {
    auto group = [&](auto& layers, const std::string& prefix) {
        for (std::size_t k = 0; k < layers.size(); ++k) fn(prefix + "." + std::to_string(k), layers[k]);
    };
    group(net.backbone, "backbone");
    group(net.critical.trunk, "critical.trunk");
    group(net.critical.cls, "critical.cls");
    group(net.critical.reg, "critical.reg");
    group(net.noncritical.trunk, "noncritical.trunk");
    group(net.noncritical.cls, "noncritical.cls");
    group(net.noncritical.reg, "noncritical.reg");
}

bool in_stage(const std::string& name, TrainStage stage) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (stage == TrainStage::baseline) return starts("backbone.") || starts("noncritical.");
    return starts("critical.");
}

using GradBuffers = std::map<std::string, ad::ParamGrads>;

struct HeadNodes {
    ad::NodeId cls;
    ad::NodeId reg;
};

HeadNodes build_header(ad::Tape& tape, ad::NodeId x, const Header& h, const std::string& prefix,
                       std::size_t perturb_at, double xi, bool widen, GradBuffers& buffers) {
    for (std::size_t k = 0; k < h.trunk.size(); ++k) {
        if (widen && k == perturb_at) x = tape.widen(x, xi);
        const std::string name = prefix + ".trunk." + std::to_string(k);
        x = tape.layer(x, h.trunk[k], &buffers[name], name);
    }
    if (widen && perturb_at == h.trunk.size()) x = tape.widen(x, xi);
    auto branch = [&](const std::vector<Layer>& layers, const std::string& sub) {
        ad::NodeId y = x;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const std::string name = prefix + "." + sub + "." + std::to_string(k);
            y = tape.layer(y, layers[k], &buffers[name], name);
        }
        return y;
    };
    return {branch(h.cls, "cls"), branch(h.reg, "reg")};
}

CellOutput gather(const Tensor& cls, const Tensor& reg, std::size_t cell, std::size_t cells) {
    CellOutput c;
    c.pr = cls[cell];
    for (std::size_t k = 0; k < 6; ++k) c.channel(k + 1) = reg[k * cells + cell];
    return c;
}

void scatter(Tensor& gcls, Tensor& greg, std::size_t cell, std::size_t cells, const std::array<double, 7>& g) {
    gcls[cell] = g[0];
    for (std::size_t k = 0; k < 6; ++k) greg[k * cells + cell] = g[k + 1];
}

ad::LossFn grid_loss(const LabelGrid& labels, const SafetySpec& spec, const GridSpec& grid, TrainStage stage,
                     const LossOptions& opts) {
    return [&labels, &spec, &grid, stage, opts](const std::vector<const ad::NodeValue*>& in) {
        const ad::NodeValue& cls = *in[0];
        const ad::NodeValue& reg = *in[1];
        const std::size_t cells = labels.rows * labels.cols;
        if (cls.lower.size() != cells || reg.lower.size() != 6 * cells) {
            throw std::invalid_argument("loss: head outputs do not match the label grid");
        }
        ad::LossEval e;
        e.grad_lower = {Tensor(cls.lower.shape()), Tensor(reg.lower.shape())};
        e.grad_upper = {Tensor(cls.lower.shape()), Tensor(reg.lower.shape())};
        std::vector<double> terms;
        terms.reserve(cells);
        for (std::size_t i = 0; i < labels.rows; ++i) {
            for (std::size_t j = 0; j < labels.cols; ++j) {
                const std::size_t cell = i * labels.cols + j;
                const LabelCell& lb = labels.cells[cell];
                if (stage == TrainStage::baseline) {
                    const CellLossGrad g = baseline_cell_loss_grad(gather(cls.lower, reg.lower, cell, cells), lb);
                    terms.push_back(g.value);
                    scatter(e.grad_lower[0], e.grad_lower[1], cell, cells, g.d_out);
                    continue;
                }
                if (!is_critical(spec, grid, {i, j})) continue;
                if (stage == TrainStage::harden_v1) {
                    const CellLossGrad g = cell_loss_grad(gather(cls.lower, reg.lower, cell, cells), lb, spec, opts);
                    terms.push_back(g.value);
                    scatter(e.grad_lower[0], e.grad_lower[1], cell, cells, g.d_out);
                } else {
                    const IntervalCellOutput o{gather(cls.lower, reg.lower, cell, cells),
                                               gather(cls.upper, reg.upper, cell, cells)};
                    const RobustCellLossGrad g = robust_cell_loss_grad(o, lb, spec, opts);
                    terms.push_back(g.value);
                    scatter(e.grad_lower[0], e.grad_lower[1], cell, cells, g.d_lower);
                    scatter(e.grad_upper[0], e.grad_upper[1], cell, cells, g.d_upper);
                }
            }
        }
        e.value = pairwise_sum(terms);
        return e;
    };
}

// Loss and gradient contribution of one sample. `start` is the network input
// for the baseline stage and the (frozen) backbone output otherwise.
double accumulate_sample(const Network& net, const Tensor& start, const LabelGrid& labels, const TrainConfig& cfg,
                         const SafetySpec& spec, const GridSpec& grid, GradBuffers& buffers) {
    ad::Tape tape;
    ad::NodeId x = tape.input(start);
    HeadNodes heads{};
    if (cfg.stage == TrainStage::baseline) {
        for (std::size_t k = 0; k < net.backbone.size(); ++k) {
            const std::string name = "backbone." + std::to_string(k);
            x = tape.layer(x, net.backbone[k], &buffers[name], name);
        }
        heads = build_header(tape, x, net.noncritical, "noncritical", 0, 0.0, false, buffers);
    } else {
        if (net.perturbation_index > net.critical.trunk.size()) {
            throw std::invalid_argument("perturbation_index exceeds the critical header trunk");
        }
        heads = build_header(tape, x, net.critical, "critical", net.perturbation_index, cfg.xi,
                             cfg.stage == TrainStage::harden_v2, buffers);
    }
    const ad::NodeId root = tape.loss({heads.cls, heads.reg}, grid_loss(labels, spec, grid, cfg.stage, cfg.loss),
                                      "loss");
    const double value = tape.scalar(root);
    if (!std::isfinite(value)) throw ad::NumericError("non-finite loss");
    tape.backward(root);
    return value;
}

GradientResult batch_gradients(const Network& net, std::span<const Tensor* const> starts,
                               std::span<const LabelGrid* const> labels, const TrainConfig& cfg,
                               const SafetySpec& spec, const GridSpec& grid) {
    GradBuffers buffers;
    std::vector<double> losses;
    for (std::size_t s = 0; s < starts.size(); ++s) {
        losses.push_back(accumulate_sample(net, *starts[s], *labels[s], cfg, spec, grid, buffers));
    }
    const double n = static_cast<double>(starts.size());
    GradientResult r;
    r.loss = pairwise_sum(losses) / n;
    for (const auto& name : trainable_parameters(net, cfg.stage)) {
        const auto dot = name.rfind('.');
        const std::string layer = name.substr(0, dot);
        const bool is_bias = name.substr(dot + 1) == "bias";
        Tensor g(parameter(net, name).shape());
        if (auto it = buffers.find(layer); it != buffers.end()) {
            const Tensor& src = is_bias ? it->second.bias : it->second.weights;
            if (src.shape() == g.shape()) g = src;
        }
        for (double& v : g.values()) v /= n;
        r.grads.emplace(name, std::move(g));
    }
    return r;
}

}  // namespace

std::vector<std::string> all_parameters(const Network& net) {
    std::vector<std::string> names;
    for_each_layer(net, [&](const std::string& prefix, const Layer& l) {
        if (!l.has_parameters()) return;
        names.push_back(prefix + ".weights");
        names.push_back(prefix + ".bias");
    });
    return names;
}

std::vector<std::string> trainable_parameters(const Network& net, TrainStage stage) {
    std::vector<std::string> names;
    for (auto& n : all_parameters(net)) {
        if (in_stage(n, stage)) names.push_back(std::move(n));
    }
    return names;
}

const Tensor& parameter(const Network& net, const std::string& name) {
    const Tensor* found = nullptr;
    for_each_layer(net, [&](const std::string& prefix, const Layer& l) {
        if (!l.has_parameters()) return;
        if (name == prefix + ".weights") found = &l.weights;
        if (name == prefix + ".bias") found = &l.bias;
    });
    if (!found) throw std::out_of_range("unknown parameter '" + name + "'");
    return *found;
}

Tensor& parameter(Network& net, const std::string& name) {
    return const_cast<Tensor&>(parameter(static_cast<const Network&>(net), name));
}

double sample_loss(const Network& net, const Sample& s, const TrainConfig& cfg, const SafetySpec& spec,
                   const GridSpec& grid) {
    const std::size_t rows = grid.output_rows();
    const std::size_t cols = grid.output_cols();
    switch (cfg.stage) {
    case TrainStage::baseline: {
        const PredictionGrid p =
            to_prediction_grid(run_header(net.noncritical, backbone_features(net, s.input), 0, rows, cols), rows, cols);
        return total_loss(p, s.labels, spec, grid, LossMode::baseline, cfg.loss);
    }
    case TrainStage::harden_v1: {
        const DetectorOutput out = forward_exact(net, s.input, critical_mask(spec, grid));
        return total_loss(out.critical, s.labels, spec, grid, LossMode::critical_tolerance, cfg.loss);
    }
    case TrainStage::harden_v2: {
        const IntervalPredictionGrid out = forward_interval(net, s.input, cfg.xi, critical_mask(spec, grid));
        return total_loss(out, s.labels, spec, grid, LossMode::critical_robust, cfg.loss);
    }
    }
    return 0.0;
}

double batch_loss(const Network& net, std::span<const Sample> batch, const TrainConfig& cfg, const SafetySpec& spec,
                  const GridSpec& grid) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    std::vector<double> losses;
    for (const auto& s : batch) losses.push_back(sample_loss(net, s, cfg, spec, grid));
    return pairwise_sum(losses) / static_cast<double>(batch.size());
}

GradientResult gradients(const Network& net, std::span<const Sample> batch, const TrainConfig& cfg,
                         const SafetySpec& spec, const GridSpec& grid) {
    if (batch.empty()) throw std::invalid_argument("gradients: empty batch");
    std::vector<Tensor> features;
    std::vector<const Tensor*> starts;
    std::vector<const LabelGrid*> labels;
    features.reserve(batch.size());
    for (const auto& s : batch) {
        if (cfg.stage == TrainStage::baseline) {
            starts.push_back(&s.input);
        } else {
            features.push_back(backbone_features(net, s.input));
            starts.push_back(&features.back());
        }
        labels.push_back(&s.labels);
    }
    return batch_gradients(net, starts, labels, cfg, spec, grid);
}

TrainResult train(Network net, std::span<const Sample> samples, const TrainConfig& cfg, const SafetySpec& spec,
                  const GridSpec& grid) {
    cfg.validate();
    grid.validate();
    spec.validate(grid);
    if (samples.empty()) throw std::invalid_argument("train: no samples");
    if (cfg.stage == TrainStage::baseline) {
        if (net.hardened) throw TrainingError("baseline training requires an unhardened network");
    } else {
        if (!net.baseline_trained) throw TrainingError("hardening requires a baseline-trained network");
        if (!net.hardened) {
            net.critical = net.noncritical;
            net.hardened = true;
        }
    }

    // Frozen backbone: its output is fixed for the whole hardening run.
    std::vector<Tensor> features;
    std::vector<const Tensor*> starts;
    for (const auto& s : samples) {
        if (cfg.stage == TrainStage::baseline) {
            starts.push_back(&s.input);
        } else {
            features.push_back(backbone_features(net, s.input));
        }
    }
    for (const auto& f : features) starts.push_back(&f);

    const std::vector<std::string> names = trainable_parameters(net, cfg.stage);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed);

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t k = order.size(); k > 1; --k) {
            std::swap(order[k - 1], order[rng.index(k)]);
        }
        std::vector<double> weighted;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            std::vector<const Tensor*> bs;
            std::vector<const LabelGrid*> bl;
            for (std::size_t k = b; k < e; ++k) {
                bs.push_back(starts[order[k]]);
                bl.push_back(&samples[order[k]].labels);
            }
            const GradientResult g = batch_gradients(net, bs, bl, cfg, spec, grid);
            if (!(g.loss <= kDivergenceLimit)) {
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                                    " (batch loss " + std::to_string(g.loss) + ")");
            }
            weighted.push_back(g.loss * static_cast<double>(e - b));
            for (const auto& name : names) {
                Tensor& p = parameter(net, name);
                const Tensor& d = g.grads.at(name);
                for (std::size_t q = 0; q < p.size(); ++q) p[q] -= cfg.learning_rate * d[q];
            }
        }
        result.history.push_back(pairwise_sum(weighted) / static_cast<double>(samples.size()));
    }

    if (cfg.stage == TrainStage::baseline) {
        net.critical = net.noncritical;
        net.baseline_trained = true;
    }
    result.net = std::move(net);
    return result;
}

}  // namespace safebev
