#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "safebev/geometry.hpp"
#include "safebev/random.hpp"

using namespace safebev;
using doctest::Approx;

namespace {

constexpr double pi = std::numbers::pi;

GridSpec fine_grid(std::size_t w) {
    GridSpec g;
    g.input_cells_l = 800;
    g.input_cells_w = w;
    g.input_cells_h = 1;
    g.cell_size = 0.1;
    g.downscale = 4;
    return g;
}

bool same_point_set(std::array<Vec2, 4> a, std::array<Vec2, 4> b, double tol) {
    for (const auto& p : a) {
        bool found = false;
        for (const auto& q : b) found = found || (std::abs(p.x - q.x) < tol && std::abs(p.y - q.y) < tol);
        if (!found) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("grid spec validation") {
    GridSpec g;
    CHECK_NOTHROW(g.validate());
    CHECK(g.output_rows() == 8);
    CHECK(g.output_cols() == 8);
    g.cell_size = 0.0;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = GridSpec{};
    g.downscale = 0;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = GridSpec{};
    g.input_cells_w = 30;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("input cell centers") {
    GridSpec g = fine_grid(12);
    Vec3 c = input_cell_center(g, 0, 0, 0);
    CHECK(c.x == Approx(0.05));
    CHECK(c.y == Approx(-11 * 0.1 / 2));
    c = input_cell_center(g, 0, 6, 0);
    CHECK(c.x == Approx(0.05));
    CHECK(c.y == Approx(0.05));
    CHECK(c.z == Approx(0.05));

    g = fine_grid(800);
    c = input_cell_center(g, 3, 0, 0);
    CHECK(c.x == Approx(0.35));
    CHECK(c.y == Approx(-39.95));
    CHECK_THROWS_AS(input_cell_center(g, 800, 0, 0), std::out_of_range);
    CHECK_THROWS_AS(input_cell_center(g, 0, 800, 0), std::out_of_range);
    CHECK_THROWS_AS(input_cell_center(g, 0, 0, 1), std::out_of_range);
}

TEST_CASE("output cell centers") {
    const GridSpec g = fine_grid(800);
    CHECK(g.output_cell_size() == Approx(0.4));
    Vec2 c = output_cell_center(g, {0, 100});
    CHECK(c.x == Approx(0.2));
    CHECK(c.y == Approx(0.2));
    c = output_cell_center(g, {9, 3});
    CHECK(c.x == Approx(3.8));
    CHECK(c.y == Approx(-38.6));
    CHECK_THROWS_AS(output_cell_center(g, {200, 0}), std::out_of_range);
    CHECK_THROWS_AS(output_cell_center(g, {0, 200}), std::out_of_range);

    CellIndex found;
    REQUIRE(locate_output_cell(g, {3.8, -38.6}, found));
    CHECK(found == CellIndex{9, 3});
    CHECK_FALSE(locate_output_cell(g, {-0.1, 0.0}, found));
    CHECK_FALSE(locate_output_cell(g, {0.1, 41.0}, found));
}

TEST_CASE("decode cell") {
    const GridSpec g = fine_grid(800);
    CellOutput o;
    o.pr = 0.7;
    o.cos_t = 1.0;
    o.sin_t = 0.0;
    o.log_w = std::log10(2.0);
    o.log_l = std::log10(4.5);
    OrientedBox b = decode_cell(g, {0, 100}, o);
    CHECK(b.cx == Approx(0.2));
    CHECK(b.cy == Approx(0.2));
    CHECK(b.width == Approx(2.0));
    CHECK(b.length == Approx(4.5));
    CHECK(b.heading == 0.0);
    CHECK(b.probability == 0.7);

    o.dx = 0.3;
    o.dy = -0.1;
    b = decode_cell(g, {9, 3}, o);
    CHECK(b.cx == Approx(4.1));
    CHECK(b.cy == Approx(-38.7));

    o.cos_t = -2.0;
    o.sin_t = 0.0;
    CHECK(decode_cell(g, {9, 3}, o).heading == Approx(pi));
}

TEST_CASE("heading normalization") {
    CHECK(normalize_heading(pi) == Approx(pi));
    CHECK(normalize_heading(-pi) == Approx(pi));
    CHECK(normalize_heading(3 * pi / 2) == Approx(-pi / 2));
    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
        const double t = rng.uniform(-50.0, 50.0);
        const double n = normalize_heading(t);
        CHECK(n > -pi);
        CHECK(n <= pi);
        CHECK(std::cos(n) == Approx(std::cos(t)).epsilon(1e-9));
        CHECK(std::sin(n) == Approx(std::sin(t)).epsilon(1e-9));
    }
}

TEST_CASE("box corners") {
    const OrientedBox unit{0, 0, 0, 1, 1, 1};
    const auto c = box_corners(unit);
    for (const auto& p : c) {
        CHECK(std::abs(p.x) == Approx(0.5));
        CHECK(std::abs(p.y) == Approx(0.5));
    }
    CHECK(polygon_area(c) == Approx(1.0));

    OrientedBox turned = unit;
    turned.heading = pi / 2;
    CHECK(same_point_set(box_corners(turned), c, 1e-12));

    const OrientedBox diamond{0, 0, pi / 4, std::sqrt(2.0), std::sqrt(2.0), 1};
    const std::array<Vec2, 4> expected{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
    CHECK(same_point_set(box_corners(diamond), expected, 1e-12));

    Rng rng(11);
    for (int k = 0; k < 500; ++k) {
        const OrientedBox b = oracle::random_box(rng);
        const auto q = box_corners(b);
        // counter-clockwise with the analytic area
        CHECK(polygon_area(q) == Approx(b.width * b.length).epsilon(1e-12));
        double mx = 0, my = 0;
        for (const auto& p : q) {
            mx += p.x / 4;
            my += p.y / 4;
        }
        CHECK(mx == Approx(b.cx).epsilon(1e-12));
        CHECK(my == Approx(b.cy).epsilon(1e-12));
    }
}

TEST_CASE("rotated IoU examples") {
    const OrientedBox a{0, 0, 0, 2, 2, 1};
    CHECK(rotated_iou(a, a) == Approx(1.0));
    OrientedBox far = a;
    far.cx = 10;
    CHECK(rotated_iou(a, far) == 0.0);
    OrientedBox shifted = a;
    shifted.cx = 1;
    CHECK(rotated_iou(a, shifted) == Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(oracle::raster_iou(a, shifted) == Approx(1.0 / 3.0).epsilon(0.01));

    const OrientedBox tiny{0, 0, 0, 1e-7, 1e-7, 1};
    CHECK(rotated_iou(tiny, tiny) == 0.0);

    OrientedBox flipped = a;
    flipped.heading = pi;
    CHECK(rotated_iou(a, flipped) == Approx(1.0));
}

TEST_CASE("rotated IoU properties") {
    Rng rng(2024);
    for (int k = 0; k < 300; ++k) {
        const OrientedBox a = oracle::random_box(rng);
        const OrientedBox b = oracle::random_box(rng);
        const double iou = rotated_iou(a, b);
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
        CHECK(iou == Approx(rotated_iou(b, a)).epsilon(1e-12));
        CHECK(std::abs(iou - oracle::raster_iou(a, b)) <= 0.01);

        // rigid motion of both boxes
        const double t = rng.uniform(-pi, pi);
        const double tx = rng.uniform(-20.0, 20.0), ty = rng.uniform(-20.0, 20.0);
        auto move = [&](OrientedBox x) {
            const double nx = std::cos(t) * x.cx - std::sin(t) * x.cy + tx;
            const double ny = std::sin(t) * x.cx + std::cos(t) * x.cy + ty;
            x.cx = nx;
            x.cy = ny;
            x.heading = normalize_heading(x.heading + t);
            return x;
        };
        CHECK(std::abs(rotated_iou(move(a), move(b)) - iou) <= 1e-9);

        CHECK(rotated_iou(a, a) == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("containment") {
    const OrientedBox outer{1, 2, 0.3, 2, 4, 1};
    CHECK(contains(outer, outer));
    OrientedBox shrunk = outer;
    shrunk.width *= 0.9;
    shrunk.length *= 0.9;
    CHECK(contains(outer, shrunk));
    CHECK(oracle::raster_contains(outer, shrunk));
    OrientedBox beyond = shrunk;
    beyond.cx += 0.5;
    CHECK_FALSE(contains(outer, beyond));
    CHECK_FALSE(oracle::raster_contains(outer, beyond));

    Rng rng(5);
    for (int k = 0; k < 300; ++k) {
        const OrientedBox a = oracle::random_box(rng, 1.0, 1.0, 6.0);
        const OrientedBox b = oracle::random_box(rng, 1.0, 0.5, 3.0);
        CHECK(contains(a, b) == oracle::raster_contains(a, b, 60));
    }
}

TEST_CASE("enclosing box") {
    const OrientedBox anchor{0, 0, 0, 2, 4, 0.9};
    const std::vector<OrientedBox> single{anchor};
    const OrientedBox e1 = enclosing_box(anchor, single);
    CHECK(e1.cx == Approx(0));
    CHECK(e1.width == Approx(2));
    CHECK(e1.length == Approx(4));

    const std::vector<OrientedBox> twins{anchor, anchor};
    CHECK(enclosing_box(anchor, twins).length == Approx(4));

    OrientedBox moved = anchor;
    moved.cx = 0.4;
    const std::vector<OrientedBox> pair{anchor, moved};
    const OrientedBox e = enclosing_box(anchor, pair);
    CHECK(e.width == Approx(2.0));
    CHECK(e.length == Approx(4.4));
    CHECK(e.cx == Approx(0.2));
    CHECK(e.cy == Approx(0.0));
    CHECK(e.heading == anchor.heading);
    CHECK(e.probability == anchor.probability);

    CHECK_THROWS_AS(enclosing_box(anchor, std::vector<OrientedBox>{}), std::invalid_argument);

    Rng rng(8);
    for (int k = 0; k < 200; ++k) {
        std::vector<OrientedBox> boxes;
        const std::size_t n = 1 + rng.index(6);
        for (std::size_t m = 0; m < n; ++m) boxes.push_back(oracle::random_box(rng));
        const OrientedBox env = enclosing_box(boxes[0], boxes);
        CHECK(env.heading == boxes[0].heading);
        for (const auto& b : boxes) {
            CHECK(contains(env, b));
            CHECK(oracle::raster_contains(env, b, 40));
        }
    }
}
