#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "safebev/random.hpp"
#include "safebev/safety_spec.hpp"
#include "safebev/scenes.hpp"

using namespace safebev;

namespace {

Scene one_vehicle(OrientedBox b) {
    Scene s;
    s.vehicles.push_back(b);
    return s;
}

// Input cells hit by points sampled densely along the outline, skipping
// points too close to a cell boundary to attribute reliably.
std::set<std::pair<std::size_t, std::size_t>> outline_cells(const OrientedBox& b, const GridSpec& g) {
    std::set<std::pair<std::size_t, std::size_t>> out;
    const auto c = box_corners(b);
    for (std::size_t e = 0; e < 4; ++e) {
        const Vec2 p = c[e], q = c[(e + 1) % 4];
        for (int k = 0; k <= 4000; ++k) {
            const double t = k / 4000.0;
            const double x = p.x + t * (q.x - p.x);
            const double y = p.y + t * (q.y - p.y) - g.y_min();
            const double fi = x / g.cell_size, fj = y / g.cell_size;
            if (std::abs(fi - std::round(fi)) < 1e-6 || std::abs(fj - std::round(fj)) < 1e-6) continue;
            if (fi < 0 || fj < 0 || fi >= g.input_cells_l || fj >= g.input_cells_w) continue;
            out.insert({static_cast<std::size_t>(fi), static_cast<std::size_t>(fj)});
        }
    }
    return out;
}

double outline_distance(const OrientedBox& b, double x, double y) {
    const auto c = box_corners(b);
    double best = INFINITY;
    for (std::size_t e = 0; e < 4; ++e) {
        const Vec2 p = c[e], q = c[(e + 1) % 4];
        const double dx = q.x - p.x, dy = q.y - p.y;
        const double t = std::clamp(((x - p.x) * dx + (y - p.y) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
        best = std::min(best, std::hypot(x - p.x - t * dx, y - p.y - t * dy));
    }
    return best;
}

}  // namespace

TEST_CASE("generation is deterministic") {
    const GridSpec grid;
    const SafetySpec spec;
    const auto a = generate(20, grid, spec, 7);
    const auto b = generate(20, grid, spec, 7);
    CHECK(a == b);
    std::ostringstream sa, sb;
    write_scenes(a, sa);
    write_scenes(b, sb);
    CHECK(sa.str() == sb.str());
    CHECK(generate_scene(5, grid, spec, 7) == a[5]);
    CHECK_FALSE(generate(20, grid, spec, 8) == a);
    CHECK(make_sample(a[3], grid).input == make_sample(b[3], grid).input);
    CHECK_THROWS_AS(generate(0, grid, spec, 7), std::invalid_argument);
}

TEST_CASE("generated scenes satisfy the scene invariants") {
    const GridSpec grid;
    const SafetySpec spec;
    const VehicleSizeRange sizes;
    const auto scenes = generate(100, grid, spec, 11);
    for (const Scene& s : scenes) {
        CHECK(s.vehicles.size() >= 1);
        CHECK(s.vehicles.size() <= 4);
        for (std::size_t a = 0; a < s.vehicles.size(); ++a) {
            const OrientedBox& v = s.vehicles[a];
            CHECK(v.width >= sizes.min_width);
            CHECK(v.width <= sizes.max_width);
            CHECK(v.length >= sizes.min_length);
            CHECK(v.length <= sizes.max_length);
            for (const Vec2& c : box_corners(v)) {
                CHECK(c.x >= 0.0);
                CHECK(c.x <= grid.x_max());
                CHECK(c.y >= grid.y_min());
                CHECK(c.y <= grid.y_max());
            }
            for (std::size_t b = a + 1; b < s.vehicles.size(); ++b) {
                CHECK(rotated_iou(v, s.vehicles[b]) == 0.0);
                CHECK(oracle::raster_intersection(v, s.vehicles[b], 0.02) == 0.0);
            }
        }
        const LabelGrid lb = encode_labels(s, grid);
        std::size_t positives = 0, critical_positives = 0;
        for (std::size_t i = 0; i < lb.rows; ++i) {
            for (std::size_t j = 0; j < lb.cols; ++j) {
                if (!lb.at(i, j).positive) continue;
                ++positives;
                critical_positives += is_critical(spec, grid, {i, j});
            }
        }
        CHECK(positives == s.vehicles.size());
        CHECK(critical_positives >= 1);
    }
}

TEST_CASE("impossible placements are reported") {
    const GridSpec grid;
    const SafetySpec spec;
    VehicleSizeRange huge;
    huge.min_length = huge.max_length = 40.0;
    CHECK_THROWS_AS(generate_scene(0, grid, spec, 1, huge), GenerationError);
}

TEST_CASE("rasterization") {
    const GridSpec grid;
    const Tensor empty = rasterize(Scene{}, grid);
    CHECK(empty.shape() == std::vector<std::size_t>{1, 32, 32});
    for (double v : empty.values()) CHECK(v == 0.0);

    // axis-aligned vehicle: outline cells about perimeter / cell size
    const OrientedBox b{8.13, 0.37, 0.0, 2.0, 4.5, 1.0};
    const Tensor t = rasterize(one_vehicle(b), grid);
    std::size_t ones = 0;
    for (double v : t.values()) ones += v == 1.0;
    const double expect = 2 * (b.width + b.length) / grid.cell_size;
    CHECK(std::abs(static_cast<double>(ones) - expect) <= 8.0);

    GridSpec tall = grid;
    tall.input_cells_h = 3;
    const Tensor t3 = rasterize(one_vehicle(b), tall);
    for (std::size_t k = 0; k < t.size(); ++k) {
        CHECK(t3[k] == t[k]);
        CHECK(t3[k + 2 * t.size()] == t[k]);
    }
}

TEST_CASE("rasterization agrees with a sampled outline") {
    const GridSpec grid;
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        OrientedBox b;
        b.cx = rng.uniform(5.0, 11.0);
        b.cy = rng.uniform(-3.0, 3.0);
        b.heading = rng.uniform(-3.0, 3.0);
        b.width = rng.uniform(1.5, 2.5);
        b.length = rng.uniform(3.0, 6.0);
        const Tensor t = rasterize(one_vehicle(b), grid);
        for (const auto& [i, j] : outline_cells(b, grid)) CHECK(t.at(0, i, j) == 1.0);
        const double diag = grid.cell_size * std::sqrt(2.0);
        for (std::size_t i = 0; i < grid.input_cells_l; ++i) {
            for (std::size_t j = 0; j < grid.input_cells_w; ++j) {
                const Vec3 c = input_cell_center(grid, i, j, 0);
                const double v = t.at(0, i, j);
                if (v == 1.0) {
                    CHECK(outline_distance(b, c.x, c.y) <= diag / 2 + 1e-9);
                } else if (outline_distance(b, c.x, c.y) > diag / 2 + 1e-9) {
                    CHECK(v == (oracle::inside(b, c.x, c.y) ? 0.5 : 0.0));
                }
            }
        }
    }
}

TEST_CASE("rasterization is shift equivariant") {
    const GridSpec grid;
    const OrientedBox b{8.13, 0.37, 0.3, 1.8, 4.2, 1.0};
    OrientedBox moved = b;
    moved.cx += grid.cell_size;
    moved.cy += 2 * grid.cell_size;
    const Tensor t = rasterize(one_vehicle(b), grid);
    const Tensor m = rasterize(one_vehicle(moved), grid);
    for (std::size_t i = 0; i + 1 < grid.input_cells_l; ++i) {
        for (std::size_t j = 0; j + 2 < grid.input_cells_w; ++j) {
            CHECK(m.at(0, i + 1, j + 2) == t.at(0, i, j));
        }
    }
}

TEST_CASE("label encoding") {
    const GridSpec grid;
    const LabelGrid empty = encode_labels(Scene{}, grid);
    for (const auto& c : empty.cells) CHECK_FALSE(c.positive);

    const Vec2 center = output_cell_center(grid, {2, 3});
    const LabelGrid at_center = encode_labels(one_vehicle({center.x, center.y, 0.4, 2.0, 4.5, 1.0}), grid);
    REQUIRE(at_center.at(2, 3).positive);
    CHECK(at_center.at(2, 3).targets[2] == 0.0);
    CHECK(at_center.at(2, 3).targets[3] == 0.0);

    Rng rng(4);
    for (int n = 0; n < 1000; ++n) {
        OrientedBox b{rng.uniform(0.0, grid.x_max()), rng.uniform(grid.y_min(), grid.y_max()),
                      normalize_heading(rng.uniform(-std::numbers::pi, std::numbers::pi)), rng.uniform(1.5, 2.5),
                      rng.uniform(3.0, 6.0), 1.0};
        const LabelGrid lb = encode_labels(one_vehicle(b), grid);
        CellIndex idx;
        REQUIRE(locate_output_cell(grid, {b.cx, b.cy}, idx));
        const LabelCell& cell = lb.at(idx.i, idx.j);
        REQUIRE(cell.positive);
        CellOutput o;
        o.pr = 1.0;
        for (std::size_t k = 1; k < 7; ++k) o.channel(k) = cell.targets[k - 1];
        const OrientedBox d = decode_cell(grid, idx, o);
        CHECK(std::abs(d.cx - b.cx) <= 1e-9);
        CHECK(std::abs(d.cy - b.cy) <= 1e-9);
        CHECK(std::abs(normalize_heading(d.heading - b.heading)) <= 1e-9);
        CHECK(std::abs(d.width - b.width) <= 1e-9);
        CHECK(std::abs(d.length - b.length) <= 1e-9);
    }

    Scene clash;
    clash.vehicles = {{center.x - 0.3, center.y, 0, 2, 4, 1}, {center.x + 0.3, center.y, 0, 2, 4, 1}};
    CHECK_THROWS_AS(encode_labels(clash, grid), EncodingError);
    CHECK_THROWS_AS(encode_labels(one_vehicle({-1.0, 0.0, 0, 2, 4, 1}), grid), EncodingError);
}

TEST_CASE("scene files") {
    const GridSpec grid;
    const auto scenes = generate(5, grid, SafetySpec{}, 3);
    std::stringstream ss;
    write_scenes(scenes, ss);
    const std::string text = ss.str();
    CHECK(text.rfind("safebev-scenes 1\n", 0) == 0);
    CHECK(read_scenes(ss) == scenes);

    std::istringstream commented("safebev-scenes 1\n# note\n\nscene 4 9 1\n1, 2, 0.5, 2, 4\n");
    const auto one = read_scenes(commented);
    REQUIRE(one.size() == 1);
    CHECK(one[0].id == 4);
    CHECK(one[0].seed == 9);
    CHECK(one[0].vehicles[0].heading == 0.5);

    auto fails_at = [](const std::string& body, const std::string& needle) {
        std::istringstream is(body);
        try {
            read_scenes(is);
        } catch (const std::runtime_error& e) {
            return std::string(e.what()).find(needle) != std::string::npos;
        }
        return false;
    };
    CHECK(fails_at("safebev-scenes 2\n", "line 1"));
    CHECK(fails_at("safebev-scenes 1\nscene 0 1 2\n1,2,0,2,4\n", "line"));
    CHECK(fails_at("safebev-scenes 1\nscene 0 1 1\n1,2,x,2,4\n", "line 3"));
    CHECK(fails_at("safebev-scenes 1\n1,2,0,2,4\n", "line 2"));
    CHECK_THROWS_AS(read_scenes(std::string("/nonexistent/scenes.txt")), std::runtime_error);
}

TEST_CASE("detection files") {
    const std::vector<Detection> dets{{0, {1.5, -2.25, 0.1, 2.0, 4.5, 0.9}}, {3, {0.1, 0.2, -3.0, 1.7, 3.3, 0.55}}};
    std::stringstream ss;
    write_detections(dets, ss);
    const auto back = read_detections(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].scene == 0);
    CHECK(back[0].box == dets[0].box);
    CHECK(back[1].scene == 3);
    CHECK(back[1].box == dets[1].box);
    std::istringstream bad("0,1,2,3\n");
    CHECK_THROWS_AS(read_detections(bad), std::runtime_error);
}

TEST_CASE("decimal formatting round-trips") {
    Rng rng(5);
    for (int n = 0; n < 1000; ++n) {
        const double v = rng.uniform(-1e3, 1e3) * std::pow(10.0, rng.uniform(-20, 20));
        CHECK(std::strtod(format_real(v).c_str(), nullptr) == v);
    }
    CHECK(format_real(0.5) == "0.5");
}
