#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "safebev/network.hpp"
#include "safebev/random.hpp"
#include "safebev/safety_spec.hpp"

using namespace safebev;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(-scale, scale);
    return t;
}

GridSpec small_grid() {
    GridSpec g;
    g.input_cells_l = 8;
    g.input_cells_w = 8;
    g.downscale = 2;
    return g;
}

SafetySpec small_spec() {
    SafetySpec s;
    s.gamma_l = 1;
    s.gamma_w = 1;
    return s;
}

// Detector with every parameter redrawn so that biases are nonzero and relu
// kinks are exercised on both sides.
Network random_detector(Rng& rng, const GridSpec& grid) {
    Network net = make_detector(grid, {2, 3}, rng.next());
    auto scramble = [&](std::vector<Layer>& layers) {
        for (Layer& l : layers) {
            if (!l.has_parameters()) continue;
            for (std::size_t k = 0; k < l.weights.size(); ++k) l.weights[k] = rng.uniform(-0.8, 0.8);
            for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] = rng.uniform(-0.3, 0.3);
        }
    };
    scramble(net.backbone);
    scramble(net.critical.trunk);
    scramble(net.critical.cls);
    scramble(net.critical.reg);
    net.noncritical = net.critical;
    net.perturbation_index = rng.index(net.critical.trunk.size() + 1);
    return net;
}

Tensor random_input(Rng& rng, const GridSpec& grid) {
    Tensor x({grid.input_cells_h, grid.input_cells_l, grid.input_cells_w});
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double u = rng.uniform();
        x[k] = u < 0.6 ? 0.0 : (u < 0.8 ? 0.5 : 1.0);
    }
    return x;
}

}  // namespace

TEST_CASE("layer validation and shapes") {
    CHECK_THROWS_AS(Layer::dense(Tensor({2, 3}), Tensor({3})), std::invalid_argument);
    CHECK_THROWS_AS(Layer::conv2d(Tensor({2, 1, 3}), Tensor({2})), std::invalid_argument);
    CHECK_THROWS_AS(Layer::conv2d(Tensor({2, 1, 3, 3}), Tensor({2}), 0), std::invalid_argument);
    Layer bad = Layer::relu();
    bad.bias = Tensor({1});
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    const Layer c = Layer::conv2d(Tensor({4, 2, 3, 3}), Tensor({4}), 2, 1);
    CHECK(output_shape(c, {2, 8, 6}) == std::vector<std::size_t>{4, 4, 3});
    CHECK_THROWS_AS(output_shape(c, {3, 8, 6}), std::invalid_argument);
    const Layer d = Layer::dense(Tensor({5, 12}), Tensor({5}));
    CHECK(output_shape(d, {3, 2, 2}) == std::vector<std::size_t>{5});
    CHECK_THROWS_AS(apply_layer(d, Tensor({11})), std::invalid_argument);
    CHECK(layer_kind_from_string(to_string(LayerKind::sigmoid)) == LayerKind::sigmoid);
    CHECK_THROWS_AS(layer_kind_from_string("softmax"), std::invalid_argument);
}

TEST_CASE("trivial forward examples") {
    // zero parameters give pr = 0.5 everywhere
    const GridSpec grid = small_grid();
    Network net = make_detector(grid, {2, 3}, 1);
    for (auto* group : {&net.backbone, &net.critical.trunk, &net.critical.cls, &net.critical.reg,
                        &net.noncritical.trunk, &net.noncritical.cls, &net.noncritical.reg}) {
        for (Layer& l : *group) {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }
    Rng rng(1);
    const auto mask = critical_mask(small_spec(), grid);
    const DetectorOutput out = forward_exact(net, random_input(rng, grid), mask);
    for (const auto* g : {&out.critical, &out.noncritical}) {
        for (std::size_t c = 0; c < g->cells.size(); ++c) {
            if (g->owned[c]) CHECK(g->cells[c].pr == 0.5);
        }
    }

    // identity dense layer
    Tensor eye({4, 4});
    for (std::size_t k = 0; k < 4; ++k) eye[k * 4 + k] = 1.0;
    const Tensor x = random_tensor(rng, {4});
    CHECK(apply_layer(Layer::dense(eye, Tensor({4})), x) == x);
}

TEST_CASE("dense and conv layers match naive oracles") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(6), m = 1 + rng.index(6);
        const Tensor w = random_tensor(rng, {m, n});
        const Tensor b = random_tensor(rng, {m});
        const Tensor x = random_tensor(rng, {n});
        const std::vector<double> want = oracle::dense({w.values().begin(), w.values().end()},
                                                       {b.values().begin(), b.values().end()},
                                                       {x.values().begin(), x.values().end()});
        // relu on top of the dense layer: a 2-layer net
        const Tensor y = run_layers({Layer::dense(w, b), Layer::relu()}, x);
        for (std::size_t o = 0; o < m; ++o) CHECK(std::abs(y[o] - std::max(0.0, want[o])) <= 1e-9);

        const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3), k = 1 + 2 * rng.index(2);
        const std::size_t stride = 1 + rng.index(2), pad = rng.index(2);
        const std::size_t h = k + rng.index(5), wd = k + rng.index(5);
        const Tensor cw = random_tensor(rng, {cout, cin, k, k});
        const Tensor cb = random_tensor(rng, {cout});
        const Tensor cx = random_tensor(rng, {cin, h, wd});
        const Tensor got = apply_layer(Layer::conv2d(cw, cb, stride, pad), cx);
        const Tensor ref = oracle::conv(cx, cw, cb, stride, pad);
        REQUIRE(got.shape() == ref.shape());
        for (std::size_t q = 0; q < got.size(); ++q) CHECK(std::abs(got[q] - ref[q]) <= 1e-9);
    }
}

TEST_CASE("interval corner example") {
    Tensor w({1, 2}, std::vector<double>{1.0, -1.0});
    const std::vector<Layer> layers{Layer::dense(w, Tensor({1})), Layer::relu()};
    const IntervalTensor in = IntervalTensor::widened(Tensor({2}, std::vector<double>{1.0, 1.0}), 0.5);
    const IntervalTensor out = run_layers_interval(layers, in);
    CHECK(out.lower[0] == 0.0);
    CHECK(out.upper[0] == 1.0);

    // corner enumeration of the pre-activation gives the same extremes
    double lo = INFINITY, hi = -INFINITY;
    for (double a : {0.5, 1.5}) {
        for (double b : {0.5, 1.5}) {
            const double v = std::max(0.0, a - b);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    CHECK(out.lower[0] == lo);
    CHECK(out.upper[0] == hi);
}

TEST_CASE("single layer interval bounds are tight at corners") {
    // for one affine layer the bounds are attained by some corner of the box
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(4), m = 1 + rng.index(3);
        const Tensor w = random_tensor(rng, {m, n});
        const Tensor b = random_tensor(rng, {m});
        const Tensor c = random_tensor(rng, {n});
        const double r = rng.uniform(0.0, 0.5);
        const IntervalTensor out = apply_layer_interval(Layer::dense(w, b), IntervalTensor::widened(c, r));
        for (std::size_t o = 0; o < m; ++o) {
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t mask = 0; mask < (1u << n); ++mask) {
                Tensor x = c;
                for (std::size_t k = 0; k < n; ++k) x[k] += (mask >> k & 1) ? r : -r;
                const double v = apply_layer(Layer::dense(w, b), x)[o];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            CHECK(out.lower[o] == doctest::Approx(lo).epsilon(1e-12));
            CHECK(out.upper[o] == doctest::Approx(hi).epsilon(1e-12));
        }
    }
}

TEST_CASE("detector ownership and shape errors") {
    const GridSpec grid = small_grid();
    const SafetySpec spec = small_spec();
    const auto mask = critical_mask(spec, grid);
    Rng rng(4);
    const Network net = random_detector(rng, grid);
    const DetectorOutput out = forward_exact(net, random_input(rng, grid), mask);
    REQUIRE(out.critical.rows == 4);
    REQUIRE(out.critical.cols == 4);
    for (std::size_t c = 0; c < 16; ++c) {
        CHECK(out.critical.owned[c] == mask.critical[c]);
        CHECK(out.noncritical.owned[c] == !mask.critical[c]);
    }
    CHECK_THROWS_AS(forward_exact(net, Tensor({1, 6, 8}), mask), std::invalid_argument);
    CHECK_THROWS_AS(forward_interval(net, random_input(rng, grid), -1.0, mask), std::invalid_argument);
    const auto wrong = critical_mask(SafetySpec{}, GridSpec{});
    CHECK_THROWS_AS(forward_exact(net, random_input(rng, grid), wrong), std::invalid_argument);
    Network deep = net;
    deep.perturbation_index = deep.critical.trunk.size() + 1;
    CHECK_THROWS_AS(forward_interval(deep, random_input(rng, grid), 0.1, mask), std::invalid_argument);
}

TEST_CASE("interval bounds are exact without perturbation") {
    const GridSpec grid = small_grid();
    const auto mask = critical_mask(small_spec(), grid);
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Network net = random_detector(rng, grid);
        const Tensor x = random_input(rng, grid);
        const IntervalPredictionGrid ib = forward_interval(net, x, 0.0, mask);
        const DetectorOutput ex = forward_exact(net, x, mask);
        for (std::size_t c = 0; c < ib.lower.cells.size(); ++c) {
            if (!mask.critical[c]) continue;
            for (std::size_t k = 0; k < 7; ++k) {
                CHECK(std::abs(ib.upper.cells[c].channel(k) - ib.lower.cells[c].channel(k)) <= 1e-9);
                CHECK(std::abs(ib.lower.cells[c].channel(k) - ex.critical.cells[c].channel(k)) <= 1e-9);
            }
        }
    }
}

TEST_CASE("interval bounds are sound and monotone in the radius") {
    const GridSpec grid = small_grid();
    const auto mask = critical_mask(small_spec(), grid);
    Rng rng(6);
    std::size_t violations = 0, checks = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Network net = random_detector(rng, grid);
        const Tensor x = random_input(rng, grid);
        const Tensor f = perturbation_features(net, x);
        const double xi = rng.uniform(0.0, 0.2);
        const IntervalPredictionGrid ib = forward_interval_from_features(net, f, xi, mask);
        for (int s = 0; s < 40; ++s) {
            Tensor p = f;
            for (std::size_t k = 0; k < p.size(); ++k) {
                p[k] += s % 2 ? (rng.uniform() < 0.5 ? -xi : xi) : rng.uniform(-xi, xi);
            }
            const PredictionGrid out = critical_from_features(net, p, mask);
            for (std::size_t c = 0; c < out.cells.size(); ++c) {
                if (!mask.critical[c]) continue;
                for (std::size_t k = 0; k < 7; ++k) {
                    const double v = out.cells[c].channel(k);
                    ++checks;
                    if (v < ib.lower.cells[c].channel(k) || v > ib.upper.cells[c].channel(k)) ++violations;
                }
            }
        }

        const IntervalPredictionGrid wide = forward_interval_from_features(net, f, xi * 1.5 + 0.01, mask);
        for (std::size_t c = 0; c < wide.lower.cells.size(); ++c) {
            if (!mask.critical[c]) continue;
            for (std::size_t k = 0; k < 7; ++k) {
                CHECK(wide.lower.cells[c].channel(k) <= ib.lower.cells[c].channel(k));
                CHECK(wide.upper.cells[c].channel(k) >= ib.upper.cells[c].channel(k));
            }
        }
    }
    CHECK(checks > 0);
    CHECK(violations == 0);
}

TEST_CASE("checkpoint round trip") {
    const GridSpec grid = small_grid();
    Rng rng(7);
    Network net = random_detector(rng, grid);
    net.critical.trunk[0].weights[0] = 0.1;  // not exactly representable
    net.critical.reg[0].bias[1] = -1e-300;
    net.baseline_trained = true;
    net.hardened = true;
    std::stringstream ss;
    save_checkpoint(net, ss);
    const std::string text = ss.str();
    const Network back = load_checkpoint(ss);
    CHECK(back == net);
    std::stringstream again;
    save_checkpoint(back, again);
    CHECK(again.str() == text);

    std::stringstream bad("safebev-checkpoint 99\n");
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
    std::stringstream truncated(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(std::string("/nonexistent/dir/x.ckpt")), std::runtime_error);
}
