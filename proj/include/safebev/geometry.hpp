#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace safebev {

/// Input voxelization and output down-scaling of the bird's-eye-view grid.
///
/// Input cell <i,j,k> is centered at (i*a + a/2, (j - W/2)*a + a/2, k*a + a/2)
/// with a = cell_size and W = input_cells_w. Output cell <i,j> covers a square
/// of side a*downscale.
struct GridSpec {
    std::size_t input_cells_l = 32;
    std::size_t input_cells_w = 32;
    std::size_t input_cells_h = 1;
    double cell_size = 0.5;
    std::size_t downscale = 4;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;

    [[nodiscard]] std::size_t output_rows() const { return input_cells_l / downscale; }
    [[nodiscard]] std::size_t output_cols() const { return input_cells_w / downscale; }
    [[nodiscard]] double output_cell_size() const { return cell_size * static_cast<double>(downscale); }

    /// World extent covered by the grid: x in [0, x_max], y in [y_min, y_max].
    [[nodiscard]] double x_max() const { return cell_size * static_cast<double>(input_cells_l); }
    [[nodiscard]] double y_min() const { return -0.5 * cell_size * static_cast<double>(input_cells_w); }
    [[nodiscard]] double y_max() const { return 0.5 * cell_size * static_cast<double>(input_cells_w); }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct CellIndex {
    std::size_t i = 0;
    std::size_t j = 0;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/// Vehicle footprint in world coordinates. Length runs along the heading.
struct OrientedBox {
    double cx = 0.0;
    double cy = 0.0;
    double heading = 0.0;
    double width = 1.0;
    double length = 1.0;
    double probability = 1.0;

    friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

/// Raw per-cell network output (pr, cos, sin, dx, dy, log10 w, log10 l).
struct CellOutput {
    double pr = 0.0;
    double cos_t = 0.0;
    double sin_t = 0.0;
    double dx = 0.0;
    double dy = 0.0;
    double log_w = 0.0;
    double log_l = 0.0;

    static constexpr std::size_t kChannels = 7;

    /// Channel k in 0..6, matching the tuple order above.
    [[nodiscard]] double channel(std::size_t k) const;
    double& channel(std::size_t k);

    friend bool operator==(const CellOutput&, const CellOutput&) = default;
};

/// Per-cell outputs of one header over the whole output grid. Cells the header
/// does not own (pruned final-layer neurons) are flagged in `owned`.
struct PredictionGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<CellOutput> cells;
    std::vector<bool> owned;

    PredictionGrid() = default;
    PredictionGrid(std::size_t r, std::size_t c) : rows(r), cols(c), cells(r * c), owned(r * c, true) {}

    CellOutput& at(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
    [[nodiscard]] const CellOutput& at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
};

/// Lower and upper output bounds per cell.
struct IntervalPredictionGrid {
    PredictionGrid lower;
    PredictionGrid upper;
};

inline constexpr double kGeometryEpsilon = 1e-9;

/// Maps an angle to (-pi, pi].
double normalize_heading(double theta);

Vec3 input_cell_center(const GridSpec& spec, std::size_t i, std::size_t j, std::size_t k);
Vec2 output_cell_center(const GridSpec& spec, CellIndex c);

/// Output cell containing a world point, if any.
bool locate_output_cell(const GridSpec& spec, Vec2 p, CellIndex& out);

OrientedBox decode_cell(const GridSpec& spec, CellIndex c, const CellOutput& o);

/// Corners in counter-clockwise order.
std::array<Vec2, 4> box_corners(const OrientedBox& b);

/// Signed shoelace area; positive for counter-clockwise polygons.
double polygon_area(std::span<const Vec2> poly);

/// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

double rotated_iou(const OrientedBox& a, const OrientedBox& b);
double intersection_area(const OrientedBox& a, const OrientedBox& b);

bool point_in_box(const OrientedBox& b, Vec2 p, double eps = kGeometryEpsilon);
bool contains(const OrientedBox& outer, const OrientedBox& inner);

/// Smallest box aligned with the anchor's heading covering the anchor and all `boxes`.
OrientedBox enclosing_box(const OrientedBox& anchor, std::span<const OrientedBox> boxes);

}  // namespace safebev
