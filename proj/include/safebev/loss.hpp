#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/safety_spec.hpp"

namespace safebev {

/// Ground truth for one output cell: positive flag plus the six regression
/// targets (cos, sin, dx, dy, log10 w, log10 l). Negative cells carry zeros.
struct LabelCell {
    bool positive = false;
    std::array<double, 6> targets{};
};

struct LabelGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<LabelCell> cells;

    LabelGrid() = default;
    LabelGrid(std::size_t r, std::size_t c) : rows(r), cols(c), cells(r * c) {}

    LabelCell& at(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
    [[nodiscard]] const LabelCell& at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
};

struct IntervalCellOutput {
    CellOutput lower;
    CellOutput upper;
};

enum class LossMode { critical_tolerance, critical_robust, baseline };

struct LossOptions {
    /// Apply the regression tolerance term to negative cells too (targets 0).
    bool negative_cell_regression = true;
};

/// Distance from v to [low, up]; zero inside. Bounds may be infinite.
double interval_dist(double v, double low, double up);

/// Subgradient of interval_dist in v, taking 0 at the kinks.
double interval_dist_slope(double v, double low, double up);

double cell_loss(const CellOutput& out, const LabelCell& lb, const SafetySpec& spec,
                 const LossOptions& opts = {});

double robust_cell_loss(const IntervalCellOutput& out, const LabelCell& lb, const SafetySpec& spec,
                        const LossOptions& opts = {});

/// Per-cell baseline loss: BCE on pr plus squared error on channels 2..7 for positive cells.
double baseline_cell_loss(const CellOutput& out, const LabelCell& lb);

/// Loss values together with their (sub)gradients w.r.t. the seven outputs.
struct CellLossGrad {
    double value = 0.0;
    std::array<double, 7> d_out{};
};

struct RobustCellLossGrad {
    double value = 0.0;
    std::array<double, 7> d_lower{};
    std::array<double, 7> d_upper{};
};

CellLossGrad cell_loss_grad(const CellOutput& out, const LabelCell& lb, const SafetySpec& spec,
                            const LossOptions& opts = {});
RobustCellLossGrad robust_cell_loss_grad(const IntervalCellOutput& out, const LabelCell& lb,
                                         const SafetySpec& spec, const LossOptions& opts = {});
CellLossGrad baseline_cell_loss_grad(const CellOutput& out, const LabelCell& lb);

/// Order-independent pairwise summation over a fixed binary tree.
double pairwise_sum(std::span<const double> v);

/// Sum of per-cell losses. Critical modes sum over critical cells only (the
/// robust mode reads both bounds, the tolerance mode reads `pred.lower`);
/// baseline sums over every cell and reads `pred.lower`.
double total_loss(const IntervalPredictionGrid& pred, const LabelGrid& labels, const SafetySpec& spec,
                  const GridSpec& grid, LossMode mode, const LossOptions& opts = {});

double total_loss(const PredictionGrid& pred, const LabelGrid& labels, const SafetySpec& spec,
                  const GridSpec& grid, LossMode mode, const LossOptions& opts = {});

}  // namespace safebev
