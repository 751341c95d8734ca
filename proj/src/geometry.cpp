#include "safebev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace safebev {

void GridSpec::validate() const {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
        throw std::invalid_argument("GridSpec: cell_size must be positive");
    }
    if (downscale < 1) {
        throw std::invalid_argument("GridSpec: downscale must be >= 1");
    }
    if (input_cells_l == 0 || input_cells_w == 0 || input_cells_h == 0) {
        throw std::invalid_argument("GridSpec: input dimensions must be positive");
    }
    if (input_cells_l % downscale != 0 || input_cells_w % downscale != 0) {
        throw std::invalid_argument("GridSpec: input_cells_l and input_cells_w must be divisible by downscale");
    }
}

double CellOutput::channel(std::size_t k) const {
    switch (k) {
    case 0: return pr;
    case 1: return cos_t;
    case 2: return sin_t;
    case 3: return dx;
    case 4: return dy;
    case 5: return log_w;
    case 6: return log_l;
    default: throw std::out_of_range("CellOutput: channel " + std::to_string(k));
    }
}

double& CellOutput::channel(std::size_t k) {
    switch (k) {
    case 0: return pr;
    case 1: return cos_t;
    case 2: return sin_t;
    case 3: return dx;
    case 4: return dy;
    case 5: return log_w;
    case 6: return log_l;
    default: throw std::out_of_range("CellOutput: channel " + std::to_string(k));
    }
}

double normalize_heading(double theta) {
    constexpr double pi = std::numbers::pi;
    double t = std::remainder(theta, 2.0 * pi);  // in [-pi, pi]
    if (t <= -pi) t += 2.0 * pi;
    return t;
}

Vec3 input_cell_center(const GridSpec& spec, std::size_t i, std::size_t j, std::size_t k) {
    if (i >= spec.input_cells_l || j >= spec.input_cells_w || k >= spec.input_cells_h) {
        throw std::out_of_range("input_cell_center: index outside input grid");
    }
    const double a = spec.cell_size;
    const double half_w = static_cast<double>(spec.input_cells_w) / 2.0;
    return {static_cast<double>(i) * a + a / 2.0,
            (static_cast<double>(j) - half_w) * a + a / 2.0,
            static_cast<double>(k) * a + a / 2.0};
}

Vec2 output_cell_center(const GridSpec& spec, CellIndex c) {
    if (c.i >= spec.output_rows() || c.j >= spec.output_cols()) {
        throw std::out_of_range("output_cell_center: index outside output grid");
    }
    const double s = spec.output_cell_size();
    const double half_w = static_cast<double>(spec.input_cells_w) / (2.0 * static_cast<double>(spec.downscale));
    return {static_cast<double>(c.i) * s + s / 2.0, (static_cast<double>(c.j) - half_w) * s + s / 2.0};
}

bool locate_output_cell(const GridSpec& spec, Vec2 p, CellIndex& out) {
    const double s = spec.output_cell_size();
    const double half_w = static_cast<double>(spec.input_cells_w) / (2.0 * static_cast<double>(spec.downscale));
    const double fi = std::floor(p.x / s);
    const double fj = std::floor(p.y / s + half_w);
    if (fi < 0.0 || fj < 0.0 || fi >= static_cast<double>(spec.output_rows()) ||
        fj >= static_cast<double>(spec.output_cols())) {
        return false;
    }
    out = {static_cast<std::size_t>(fi), static_cast<std::size_t>(fj)};
    return true;
}

OrientedBox decode_cell(const GridSpec& spec, CellIndex c, const CellOutput& o) {
    const Vec2 center = output_cell_center(spec, c);
    OrientedBox b;
    b.cx = center.x + o.dx;
    b.cy = center.y + o.dy;
    b.heading = normalize_heading(std::atan2(o.sin_t, o.cos_t));
    b.width = std::pow(10.0, o.log_w);
    b.length = std::pow(10.0, o.log_l);
    b.probability = o.pr;
    return b;
}

std::array<Vec2, 4> box_corners(const OrientedBox& b) {
    const double c = std::cos(b.heading);
    const double s = std::sin(b.heading);
    const double hl = b.length / 2.0;
    const double hw = b.width / 2.0;
    const std::array<Vec2, 4> local{{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
    std::array<Vec2, 4> out{};
    for (std::size_t k = 0; k < 4; ++k) {
        out[k] = {b.cx + c * local[k].x - s * local[k].y, b.cy + s * local[k].x + c * local[k].y};
    }
    return out;
}

double polygon_area(std::span<const Vec2> poly) {
    if (poly.size() < 3) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < poly.size(); ++k) {
        const Vec2& p = poly[k];
        const Vec2& q = poly[(k + 1) % poly.size()];
        acc += p.x * q.y - q.x * p.y;
    }
    return acc / 2.0;
}

namespace {

double cross(Vec2 a, Vec2 b, Vec2 p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

Vec2 line_intersection(Vec2 p, Vec2 q, Vec2 a, Vec2 b) {
    const double dp = cross(a, b, p);
    const double dq = cross(a, b, q);
    const double t = dp / (dp - dq);
    return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
    std::vector<Vec2> output(subject.begin(), subject.end());
    for (std::size_t e = 0; e < clip.size() && !output.empty(); ++e) {
        const Vec2 a = clip[e];
        const Vec2 b = clip[(e + 1) % clip.size()];
        std::vector<Vec2> input;
        input.swap(output);
        for (std::size_t k = 0; k < input.size(); ++k) {
            const Vec2 cur = input[k];
            const Vec2 prev = input[(k + input.size() - 1) % input.size()];
            const bool cur_in = cross(a, b, cur) >= -kGeometryEpsilon;
            const bool prev_in = cross(a, b, prev) >= -kGeometryEpsilon;
            if (cur_in) {
                if (!prev_in) output.push_back(line_intersection(prev, cur, a, b));
                output.push_back(cur);
            } else if (prev_in) {
                output.push_back(line_intersection(prev, cur, a, b));
            }
        }
    }
    return output;
}

double intersection_area(const OrientedBox& a, const OrientedBox& b) {
    const auto ca = box_corners(a);
    const auto cb = box_corners(b);
    const auto poly = clip_convex(ca, cb);
    return std::max(0.0, polygon_area(poly));
}

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.width * a.length + b.width * b.length - inter;
    if (!(uni > 1e-12)) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

bool point_in_box(const OrientedBox& b, Vec2 p, double eps) {
    const auto corners = box_corners(b);
    for (std::size_t e = 0; e < 4; ++e) {
        const Vec2 a = corners[e];
        const Vec2 q = corners[(e + 1) % 4];
        const double len = std::hypot(q.x - a.x, q.y - a.y);
        // signed distance of p to the edge line, positive inside
        if (cross(a, q, p) < -eps * len) return false;
    }
    return true;
}

bool contains(const OrientedBox& outer, const OrientedBox& inner) {
    for (const Vec2& p : box_corners(inner)) {
        if (!point_in_box(outer, p)) return false;
    }
    return true;
}

OrientedBox enclosing_box(const OrientedBox& anchor, std::span<const OrientedBox> boxes) {
    if (boxes.empty()) {
        throw std::invalid_argument("enclosing_box: empty box list");
    }
    const double c = std::cos(anchor.heading);
    const double s = std::sin(anchor.heading);
    double u_lo = std::numeric_limits<double>::infinity();
    double u_hi = -u_lo;
    double v_lo = u_lo;
    double v_hi = -u_lo;
    auto absorb = [&](const OrientedBox& b) {
        for (const Vec2& p : box_corners(b)) {
            const double u = c * p.x + s * p.y;
            const double v = -s * p.x + c * p.y;
            u_lo = std::min(u_lo, u);
            u_hi = std::max(u_hi, u);
            v_lo = std::min(v_lo, v);
            v_hi = std::max(v_hi, v);
        }
    };
    absorb(anchor);
    for (const auto& b : boxes) absorb(b);

    const double um = (u_lo + u_hi) / 2.0;
    const double vm = (v_lo + v_hi) / 2.0;
    OrientedBox out = anchor;
    out.cx = c * um - s * vm;
    out.cy = s * um + c * vm;
    out.length = u_hi - u_lo;
    out.width = v_hi - v_lo;
    return out;
}

}  // namespace safebev
