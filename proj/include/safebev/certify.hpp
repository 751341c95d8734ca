#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/loss.hpp"
#include "safebev/network.hpp"
#include "safebev/safety_spec.hpp"
#include "safebev/training.hpp"

namespace safebev {

/// Slack realizing the strict inequalities of the buffer bounds.
inline constexpr double kBufferSlack = 1e-9;

struct BufferBounds {
    double d = 0.0;
    double d_l = 0.0;
    double d_w = 0.0;
    double kappa_used = 0.0;
};

class ConsistencyError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct BufferOptions {
    /// Re-derive both maxima by grid search and compare with the closed form.
    bool cross_check = true;
    double grid_step = 1e-5;
    double tolerance = 1e-6;
};

/// max over alpha in [-kappa, kappa] of a*sin(alpha) + b*cos(alpha), for a, b > 0.
double max_trig_combination(double a, double b, double kappa);

/// Same maximum by dense grid search (endpoints included).
double max_trig_combination_search(double a, double b, double kappa, double step);

/// Buffers that make the enlarged prediction contain any ground truth within
/// tolerance, using spec.kappa as the angular bound.
BufferBounds buffer_bounds(const CellOutput& o, const SafetySpec& spec, const BufferOptions& opts = {});

/// Grows each side: length by 2*(d + d_l), width by 2*(d + d_w).
OrientedBox enlarge_box(const OrientedBox& b, const BufferBounds& bb);

/// Vehicle sizes the buffer computation assumes; larger decoded boxes are flagged.
struct SizeCaps {
    double max_length = 6.0;
    double max_width = 2.5;
};

/// Warning text when `b` exceeds the caps.
std::optional<std::string> size_cap_warning(const OrientedBox& b, const SizeCaps& caps);

struct Lemma1Options {
    /// false skips enlargement (negative control).
    bool enlarge = true;
};

/// Monte-Carlo containment check. Each trial draws a prediction with unit
/// (cos, sin), a positive ground truth whose channels deviate within the
/// tolerances (angle deviation satisfying both trig bounds), and counts trials
/// where the enlarged prediction fails to contain the truth.
std::size_t check_lemma1(std::size_t trials, const SafetySpec& spec, std::uint64_t seed,
                         const Lemma1Options& opts = {});

/// Outcome of the perturbation check for one critical cell.
struct Lemma2Cell {
    std::size_t sample = 0;
    CellIndex cell;
    bool positive = false;
    double robust_loss = 0.0;
    /// Robust loss is exactly zero; only eligible cells are sampled.
    bool eligible = false;
    bool a_ok = true;
    bool b_ok = true;
    bool c_ok = true;
    /// Largest observed excess beyond a threshold or tolerance (0 if none).
    double worst_excess = 0.0;
};

struct Lemma2Report {
    double xi = 0.0;
    std::size_t samples_per_cell = 0;
    std::vector<Lemma2Cell> cells;

    [[nodiscard]] std::size_t eligible() const;
    [[nodiscard]] std::size_t skipped() const;
    [[nodiscard]] std::size_t violations() const;
};

/// Floating-point allowance when comparing sampled outputs with thresholds.
inline constexpr double kLemma2Tolerance = 1e-12;

/// For every critical cell of every sample with zero robust loss at `xi`, draws
/// `samples` perturbations of the perturbation-point features (infinity norm
/// <= xi; half uniform, half box corners, shared across the cells of a sample)
/// and checks (a) positive cells keep pr >= threshold, (b) negative cells keep
/// pr <= threshold, (c) channels 2..7 stay within tolerance. xi = 0 uses a
/// single unperturbed sample.
Lemma2Report check_lemma2(const Network& net, std::span<const Sample> data, double xi, std::size_t samples,
                          const SafetySpec& spec, const GridSpec& grid, std::uint64_t seed,
                          const LossOptions& loss = {});

void write_lemma2_report(const Lemma2Report& r, std::ostream& text, std::ostream* csv);

/// Per-cell buffer record for the critical cells of one prediction grid.
struct BufferRecord {
    std::size_t sample = 0;
    CellIndex cell;
    CellOutput output;
    BufferBounds bounds;
    OrientedBox raw;
    OrientedBox enlarged;
};

std::vector<BufferRecord> certify_buffers(const PredictionGrid& critical, std::size_t sample, const SafetySpec& spec,
                                          const GridSpec& grid, const BufferOptions& opts = {});

void write_buffer_records(std::span<const BufferRecord> records, std::ostream& csv);

}  // namespace safebev
