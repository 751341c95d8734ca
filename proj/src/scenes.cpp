#include "safebev/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "safebev/random.hpp"

namespace safebev {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

bool inside_world(const OrientedBox& b, const GridSpec& grid) {
    for (const Vec2& p : box_corners(b)) {
        if (p.x < 0.0 || p.x > grid.x_max() || p.y < grid.y_min() || p.y > grid.y_max()) return false;
    }
    return true;
}

// Disjoint with a clearance of one input cell so outlines never share a cell.
bool clear_of(const OrientedBox& b, const std::vector<OrientedBox>& others, double gap) {
    OrientedBox grown = b;
    grown.width += 2.0 * gap;
    grown.length += 2.0 * gap;
    for (const auto& o : others) {
        if (intersection_area(grown, o) > 0.0) return false;
    }
    return true;
}

// Liang-Barsky test of segment p-q against the closed rectangle [x0,x1]x[y0,y1].
bool segment_hits_rect(Vec2 p, Vec2 q, double x0, double x1, double y0, double y1) {
    double t0 = 0.0;
    double t1 = 1.0;
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    const double ps[4] = {-dx, dx, -dy, dy};
    const double qs[4] = {p.x - x0, x1 - p.x, p.y - y0, y1 - p.y};
    for (int k = 0; k < 4; ++k) {
        if (ps[k] == 0.0) {
            if (qs[k] < 0.0) return false;
            continue;
        }
        const double r = qs[k] / ps[k];
        if (ps[k] < 0.0) {
            t0 = std::max(t0, r);
        } else {
            t1 = std::min(t1, r);
        }
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace

Scene generate_scene(std::uint64_t id, const GridSpec& grid, const SafetySpec& spec, std::uint64_t seed,
                     const VehicleSizeRange& sizes) {
    grid.validate();
    spec.validate(grid);
    const CriticalMask mask = critical_mask(spec, grid);
    std::vector<CellIndex> critical_cells;
    for (std::size_t i = 0; i < mask.rows; ++i) {
        for (std::size_t j = 0; j < mask.cols; ++j) {
            if (mask.at(i, j)) critical_cells.push_back({i, j});
        }
    }
    if (critical_cells.empty()) throw GenerationError("critical area is empty");

    Scene scene;
    scene.id = id;
    scene.seed = mix_seed(seed, id);
    Rng rng(scene.seed);
    const std::size_t count = 1 + static_cast<std::size_t>(rng.index(4));
    const double s = grid.output_cell_size();
    std::vector<CellIndex> used;

    for (std::size_t v = 0; v < count; ++v) {
        std::size_t attempts = 0;
        while (true) {
            if (++attempts > kMaxPlacementAttempts) {
                throw GenerationError("scene " + std::to_string(id) + ": could not place vehicle " +
                                      std::to_string(v) + " after " + std::to_string(kMaxPlacementAttempts) +
                                      " attempts");
            }
            OrientedBox b;
            if (v == 0) {
                const CellIndex c = critical_cells[rng.index(critical_cells.size())];
                const Vec2 center = output_cell_center(grid, c);
                b.cx = center.x + rng.uniform(-0.5, 0.5) * s;
                b.cy = center.y + rng.uniform(-0.5, 0.5) * s;
            } else {
                b.cx = rng.uniform(0.0, grid.x_max());
                b.cy = rng.uniform(grid.y_min(), grid.y_max());
            }
            b.heading = normalize_heading(rng.uniform(-std::numbers::pi, std::numbers::pi));
            b.width = rng.uniform(sizes.min_width, sizes.max_width);
            b.length = rng.uniform(sizes.min_length, sizes.max_length);
            b.probability = 1.0;

            CellIndex cell;
            if (!locate_output_cell(grid, {b.cx, b.cy}, cell)) continue;
            if (std::find(used.begin(), used.end(), cell) != used.end()) continue;
            if (!inside_world(b, grid)) continue;
            if (!clear_of(b, scene.vehicles, grid.cell_size)) continue;
            scene.vehicles.push_back(b);
            used.push_back(cell);
            break;
        }
    }
    return scene;
}

std::vector<Scene> generate(std::size_t count, const GridSpec& grid, const SafetySpec& spec, std::uint64_t seed,
                            const VehicleSizeRange& sizes) {
    if (count == 0) throw std::invalid_argument("generate: count must be positive");
    std::vector<Scene> scenes;
    scenes.reserve(count);
    for (std::size_t k = 0; k < count; ++k) scenes.push_back(generate_scene(k, grid, spec, seed, sizes));
    return scenes;
}

Tensor rasterize(const Scene& scene, const GridSpec& grid) {
    grid.validate();
    const std::size_t L = grid.input_cells_l;
    const std::size_t W = grid.input_cells_w;
    const double a = grid.cell_size;
    const double y0 = grid.y_min();
    Tensor plane({L, W});
    for (const auto& b : scene.vehicles) {
        const auto corners = box_corners(b);
        double xmin = corners[0].x, xmax = xmin, ymin = corners[0].y, ymax = ymin;
        for (const auto& p : corners) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const auto clamp_index = [](double v, std::size_t n) {
            return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
        };
        const std::size_t i0 = clamp_index(std::floor(xmin / a) - 1, L);
        const std::size_t i1 = clamp_index(std::floor(xmax / a) + 1, L);
        const std::size_t j0 = clamp_index(std::floor((ymin - y0) / a) - 1, W);
        const std::size_t j1 = clamp_index(std::floor((ymax - y0) / a) + 1, W);
        for (std::size_t i = i0; i <= i1; ++i) {
            for (std::size_t j = j0; j <= j1; ++j) {
                const double cx0 = static_cast<double>(i) * a;
                const double cy0 = y0 + static_cast<double>(j) * a;
                bool edge = false;
                for (std::size_t e = 0; e < 4 && !edge; ++e) {
                    edge = segment_hits_rect(corners[e], corners[(e + 1) % 4], cx0, cx0 + a, cy0, cy0 + a);
                }
                double& cell = plane[i * W + j];
                if (edge) {
                    cell = kPerimeterValue;
                } else if (point_in_box(b, {cx0 + a / 2.0, cy0 + a / 2.0}, 0.0)) {
                    cell = std::max(cell, kInteriorValue);
                }
            }
        }
    }
    Tensor out({grid.input_cells_h, L, W});
    for (std::size_t k = 0; k < grid.input_cells_h; ++k) {
        std::copy(plane.values().begin(), plane.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(k * L * W));
    }
    return out;
}

LabelGrid encode_labels(const Scene& scene, const GridSpec& grid) {
    grid.validate();
    LabelGrid labels(grid.output_rows(), grid.output_cols());
    for (const auto& b : scene.vehicles) {
        CellIndex c;
        if (!locate_output_cell(grid, {b.cx, b.cy}, c)) {
            throw EncodingError("scene " + std::to_string(scene.id) + ": vehicle center outside the output grid");
        }
        LabelCell& cell = labels.at(c.i, c.j);
        if (cell.positive) {
            throw EncodingError("scene " + std::to_string(scene.id) + ": two vehicle centers in cell <" +
                                std::to_string(c.i) + "," + std::to_string(c.j) + ">");
        }
        const Vec2 center = output_cell_center(grid, c);
        cell.positive = true;
        cell.targets = {std::cos(b.heading), std::sin(b.heading), b.cx - center.x, b.cy - center.y,
                        std::log10(b.width), std::log10(b.length)};
    }
    return labels;
}

Sample make_sample(const Scene& scene, const GridSpec& grid) {
    return {rasterize(scene, grid), encode_labels(scene, grid)};
}

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, const GridSpec& grid) {
    std::vector<Sample> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(make_sample(s, grid));
    return out;
}

// ---------------------------------------------------------------------------
// Scene file:
//
//   safebev-scenes 1
//   scene <id> <seed> <vehicle count>
//   <cx>,<cy>,<heading>,<width>,<length>
//   ...

namespace {

constexpr const char* kScenesMagic = "safebev-scenes";
constexpr int kScenesVersion = 1;

[[noreturn]] void parse_fail(const std::string& what, std::size_t line) {
    throw std::runtime_error(what + " (line " + std::to_string(line) + ")");
}

std::vector<double> split_reals(const std::string& text, std::size_t expected, std::size_t line) {
    std::vector<double> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = text.find(',', start);
        const std::string field = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        char* end = nullptr;
        const double v = std::strtod(field.c_str(), &end);
        if (field.empty() || end != field.c_str() + field.size()) parse_fail("malformed number '" + field + "'", line);
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.size() != expected) {
        parse_fail("expected " + std::to_string(expected) + " fields, found " + std::to_string(out.size()), line);
    }
    return out;
}

bool blank_or_comment(const std::string& s) {
    const auto p = s.find_first_not_of(" \t\r");
    return p == std::string::npos || s[p] == '#';
}

std::uint64_t parse_u64(const std::string& w, std::size_t line) {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(w, &pos);
    } catch (const std::exception&) {
        parse_fail("expected an unsigned integer, found '" + w + "'", line);
    }
    if (pos != w.size()) parse_fail("expected an unsigned integer, found '" + w + "'", line);
    return v;
}

}  // namespace

void write_scenes(const std::vector<Scene>& scenes, std::ostream& os) {
    os << kScenesMagic << ' ' << kScenesVersion << '\n';
    for (const auto& s : scenes) {
        os << "scene " << s.id << ' ' << s.seed << ' ' << s.vehicles.size() << '\n';
        for (const auto& b : s.vehicles) {
            os << format_real(b.cx) << ',' << format_real(b.cy) << ',' << format_real(b.heading) << ','
               << format_real(b.width) << ',' << format_real(b.length) << '\n';
        }
    }
}

std::vector<Scene> read_scenes(std::istream& is) {
    std::string line;
    std::size_t n = 0;
    auto next = [&]() {
        while (std::getline(is, line)) {
            ++n;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!blank_or_comment(line)) return true;
        }
        return false;
    };
    if (!next()) throw std::runtime_error("scene file is empty");
    {
        std::istringstream hs(line);
        std::string magic;
        int version = 0;
        if (!(hs >> magic >> version) || magic != kScenesMagic) parse_fail("missing 'safebev-scenes' header", n);
        if (version != kScenesVersion) parse_fail("unsupported scene format version " + std::to_string(version), n);
    }
    std::vector<Scene> scenes;
    while (next()) {
        std::istringstream ls(line);
        std::string tag, id, seed, count;
        if (!(ls >> tag >> id >> seed >> count) || tag != "scene") parse_fail("expected 'scene <id> <seed> <count>'", n);
        Scene s;
        s.id = parse_u64(id, n);
        s.seed = parse_u64(seed, n);
        const std::uint64_t k = parse_u64(count, n);
        for (std::uint64_t v = 0; v < k; ++v) {
            if (!next()) parse_fail("unexpected end of file inside scene " + id, n);
            const auto f = split_reals(line, 5, n);
            if (!(f[3] > 0.0) || !(f[4] > 0.0)) parse_fail("vehicle width and length must be positive", n);
            s.vehicles.push_back({f[0], f[1], f[2], f[3], f[4], 1.0});
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

void write_scenes(const std::vector<Scene>& scenes, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_scenes(scenes, os);
}

std::vector<Scene> read_scenes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_scenes(is);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_detections(const std::vector<Detection>& dets, std::ostream& os) {
    for (const auto& d : dets) {
        os << d.scene << ',' << format_real(d.box.cx) << ',' << format_real(d.box.cy) << ','
           << format_real(d.box.heading) << ',' << format_real(d.box.width) << ',' << format_real(d.box.length)
           << ',' << format_real(d.box.probability) << '\n';
    }
}

std::vector<Detection> read_detections(std::istream& is) {
    std::vector<Detection> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (blank_or_comment(line)) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) parse_fail("expected 7 comma-separated fields", n);
        Detection d;
        d.scene = parse_u64(line.substr(0, comma), n);
        const auto f = split_reals(line.substr(comma + 1), 6, n);
        d.box = {f[0], f[1], f[2], f[3], f[4], f[5]};
        if (!(d.box.width > 0.0) || !(d.box.length > 0.0)) parse_fail("box width and length must be positive", n);
        out.push_back(d);
    }
    return out;
}

void write_detections(const std::vector<Detection>& dets, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_detections(dets, os);
}

std::vector<Detection> read_detections(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_detections(is);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace safebev
