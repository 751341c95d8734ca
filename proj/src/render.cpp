#include "safebev/render.hpp"

#include <cstdio>
#include <ostream>

namespace safebev {

const char* role_color(BoxRole r) {
    switch (r) {
    case BoxRole::ground_truth: return "#2e7d32";
    case BoxRole::raw: return "#1565c0";
    case BoxRole::enlarged: return "#ef6c00";
    case BoxRole::merged: return "#c62828";
    case BoxRole::noncritical: return "#757575";
    }
    return "#000000";
}

namespace {

constexpr double kScale = 20.0;  // px per meter
constexpr double kMargin = 20.0;

const char* role_name(BoxRole r) {
    switch (r) {
    case BoxRole::ground_truth: return "ground truth";
    case BoxRole::raw: return "raw prediction";
    case BoxRole::enlarged: return "enlarged";
    case BoxRole::merged: return "merged";
    case BoxRole::noncritical: return "non-critical";
    }
    return "";
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

}  // namespace

void render_svg(std::ostream& os, const GridSpec& grid, const SafetySpec& spec, const std::vector<RenderLayer>& layers,
                const std::string& title) {
    const double width_m = grid.y_max() - grid.y_min();
    const double height_m = grid.x_max();
    const double w = width_m * kScale + 2 * kMargin;
    const double h = height_m * kScale + 2 * kMargin + 20.0 * static_cast<double>(layers.size() + 1);
    // world (x forward, y left) -> svg (right, down)
    auto sx = [&](double y) { return kMargin + (grid.y_max() - y) * kScale; };
    auto sy = [&](double x) { return kMargin + (height_m - x) * kScale; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
       << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\">\n";
    os << "<title>" << escape(title) << "</title>\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"white\"/>\n";

    const double s = grid.output_cell_size();
    for (std::size_t i = 0; i < grid.output_rows(); ++i) {
        for (std::size_t j = 0; j < grid.output_cols(); ++j) {
            const Vec2 c = output_cell_center(grid, {i, j});
            const bool crit = is_critical(spec, grid, {i, j});
            os << "<rect x=\"" << num(sx(c.y + s / 2)) << "\" y=\"" << num(sy(c.x + s / 2)) << "\" width=\""
               << num(s * kScale) << "\" height=\"" << num(s * kScale) << "\" fill=\""
               << (crit ? "#fff3e0" : "none") << "\" stroke=\"#e0e0e0\" stroke-width=\"0.5\"/>\n";
        }
    }

    for (const auto& layer : layers) {
        os << "<g stroke=\"" << role_color(layer.role) << "\" fill=\"none\" stroke-width=\""
           << (layer.role == BoxRole::merged ? "2" : "1") << "\">\n";
        for (const auto& b : layer.boxes) {
            os << "  <polygon points=\"";
            const auto corners = box_corners(b);
            for (std::size_t k = 0; k < 4; ++k) {
                os << (k ? " " : "") << num(sx(corners[k].y)) << ',' << num(sy(corners[k].x));
            }
            os << "\"/>\n";
        }
        os << "</g>\n";
    }

    double ly = kMargin + height_m * kScale + 20.0;
    os << "<text x=\"" << num(kMargin) << "\" y=\"" << num(ly) << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << escape(title) << "</text>\n";
    for (const auto& layer : layers) {
        ly += 20.0;
        os << "<text x=\"" << num(kMargin) << "\" y=\"" << num(ly) << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
           << role_color(layer.role) << "\">" << role_name(layer.role) << " (" << layer.boxes.size() << ")</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace safebev
