#include "safebev/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace safebev {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProbEps = 1e-12;

double target(const LabelCell& lb, std::size_t channel) {
    return lb.targets[channel - 1];
}

bool wants_regression(const LabelCell& lb, const LossOptions& opts) {
    return lb.positive || opts.negative_cell_regression;
}

// Sum over channels 2..7 of the tolerance distance, with slopes.
double eta(const CellOutput& out, const LabelCell& lb, const SafetySpec& spec, std::array<double, 7>* slope,
           double weight) {
    double acc = 0.0;
    for (std::size_t k = 1; k < 7; ++k) {
        const double t = target(lb, k);
        const double d = spec.deltas[k - 1];
        const double v = out.channel(k);
        acc += interval_dist(v, t - d, t + d);
        if (slope) (*slope)[k] += weight * interval_dist_slope(v, t - d, t + d);
    }
    return acc;
}

void check_order(const IntervalCellOutput& out) {
    for (std::size_t k = 0; k < 7; ++k) {
        if (!(out.lower.channel(k) <= out.upper.channel(k))) {
            throw std::invalid_argument("robust_cell_loss: lower bound exceeds upper bound");
        }
    }
}

}  // namespace

double interval_dist(double v, double low, double up) {
    if (low > up) {
        throw std::invalid_argument("interval_dist: low > up");
    }
    return std::max(std::max(low - v, 0.0), std::max(v - up, 0.0));
}

double interval_dist_slope(double v, double low, double up) {
    if (v < low) return -1.0;
    if (v > up) return 1.0;
    return 0.0;
}

CellLossGrad cell_loss_grad(const CellOutput& out, const LabelCell& lb, const SafetySpec& spec,
                            const LossOptions& opts) {
    CellLossGrad g;
    const double a = spec.class_threshold;
    if (lb.positive) {
        g.value = interval_dist(out.pr, a, kInf);
        g.d_out[0] = interval_dist_slope(out.pr, a, kInf);
    } else {
        g.value = interval_dist(out.pr, -kInf, a);
        g.d_out[0] = interval_dist_slope(out.pr, -kInf, a);
    }
    if (wants_regression(lb, opts)) g.value += eta(out, lb, spec, &g.d_out, 1.0);
    return g;
}

double cell_loss(const CellOutput& out, const LabelCell& lb, const SafetySpec& spec, const LossOptions& opts) {
    return cell_loss_grad(out, lb, spec, opts).value;
}

RobustCellLossGrad robust_cell_loss_grad(const IntervalCellOutput& out, const LabelCell& lb,
                                         const SafetySpec& spec, const LossOptions& opts) {
    check_order(out);
    RobustCellLossGrad g;
    const double a = spec.class_threshold;
    if (lb.positive) {
        g.value = interval_dist(out.lower.pr, a, kInf);
        g.d_lower[0] = interval_dist_slope(out.lower.pr, a, kInf);
    } else {
        g.value = interval_dist(out.upper.pr, -kInf, a);
        g.d_upper[0] = interval_dist_slope(out.upper.pr, -kInf, a);
    }
    if (wants_regression(lb, opts)) {
        const double eta_l = eta(out.lower, lb, spec, &g.d_lower, 0.5);
        const double eta_u = eta(out.upper, lb, spec, &g.d_upper, 0.5);
        g.value += (eta_l + eta_u) / 2.0;
    }
    return g;
}

double robust_cell_loss(const IntervalCellOutput& out, const LabelCell& lb, const SafetySpec& spec,
                        const LossOptions& opts) {
    return robust_cell_loss_grad(out, lb, spec, opts).value;
}

CellLossGrad baseline_cell_loss_grad(const CellOutput& out, const LabelCell& lb) {
    CellLossGrad g;
    const double p = std::clamp(out.pr, kProbEps, 1.0 - kProbEps);
    const double y = lb.positive ? 1.0 : 0.0;
    g.value = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    if (out.pr > kProbEps && out.pr < 1.0 - kProbEps) {
        g.d_out[0] = -y / p + (1.0 - y) / (1.0 - p);
    }
    if (lb.positive) {
        for (std::size_t k = 1; k < 7; ++k) {
            const double e = out.channel(k) - target(lb, k);
            g.value += e * e;
            g.d_out[k] = 2.0 * e;
        }
    }
    return g;
}

double baseline_cell_loss(const CellOutput& out, const LabelCell& lb) {
    return baseline_cell_loss_grad(out, lb).value;
}

double pairwise_sum(std::span<const double> v) {
    if (v.empty()) return 0.0;
    if (v.size() <= 8) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double total_loss(const IntervalPredictionGrid& pred, const LabelGrid& labels, const SafetySpec& spec,
                  const GridSpec& grid, LossMode mode, const LossOptions& opts) {
    const std::size_t rows = grid.output_rows();
    const std::size_t cols = grid.output_cols();
    if (pred.lower.rows != rows || pred.lower.cols != cols || pred.upper.rows != rows ||
        pred.upper.cols != cols || labels.rows != rows || labels.cols != cols) {
        throw std::invalid_argument("total_loss: prediction/label shape does not match the grid");
    }
    std::vector<double> terms;
    terms.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const LabelCell& lb = labels.at(i, j);
            switch (mode) {
            case LossMode::baseline:
                terms.push_back(baseline_cell_loss(pred.lower.at(i, j), lb));
                break;
            case LossMode::critical_tolerance:
                if (is_critical(spec, grid, {i, j})) terms.push_back(cell_loss(pred.lower.at(i, j), lb, spec, opts));
                break;
            case LossMode::critical_robust:
                if (is_critical(spec, grid, {i, j})) {
                    terms.push_back(robust_cell_loss({pred.lower.at(i, j), pred.upper.at(i, j)}, lb, spec, opts));
                }
                break;
            }
        }
    }
    return pairwise_sum(terms);
}

double total_loss(const PredictionGrid& pred, const LabelGrid& labels, const SafetySpec& spec,
                  const GridSpec& grid, LossMode mode, const LossOptions& opts) {
    return total_loss(IntervalPredictionGrid{pred, pred}, labels, spec, grid, mode, opts);
}

}  // namespace safebev
