#include "safebev/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "safebev/random.hpp"

namespace safebev {

const char* to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "relu") return LayerKind::relu;
    if (s == "sigmoid") return LayerKind::sigmoid;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

void Layer::validate() const {
    switch (kind) {
    case LayerKind::conv2d:
        if (weights.rank() != 4 || bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
            throw std::invalid_argument("conv2d layer: weights must be (out,in,kh,kw) and bias (out)");
        }
        if (stride == 0) throw std::invalid_argument("conv2d layer: stride must be positive");
        break;
    case LayerKind::dense:
        if (weights.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
            throw std::invalid_argument("dense layer: weights must be (out,in) and bias (out)");
        }
        break;
    case LayerKind::relu:
    case LayerKind::sigmoid:
        if (!weights.empty() || !bias.empty()) {
            throw std::invalid_argument("activation layer must not carry parameters");
        }
        break;
    }
}

Layer Layer::conv2d(Tensor w, Tensor b, std::size_t stride, std::size_t padding) {
    Layer l{LayerKind::conv2d, std::move(w), std::move(b), stride, padding};
    l.validate();
    return l;
}

Layer Layer::dense(Tensor w, Tensor b) {
    Layer l{LayerKind::dense, std::move(w), std::move(b), 1, 0};
    l.validate();
    return l;
}

namespace {

struct ConvGeometry {
    std::size_t cin, hin, win, cout, kh, kw, hout, wout, stride, pad;
};

ConvGeometry conv_geometry(const Layer& layer, const std::vector<std::size_t>& in) {
    if (in.size() != 3) {
        throw std::invalid_argument("conv2d: expected (channels,rows,cols) input, got " + shape_string(in));
    }
    const auto& w = layer.weights.shape();
    if (w[1] != in[0]) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(in[0]) + " channels, weights expect " +
                                    std::to_string(w[1]));
    }
    ConvGeometry g{in[0], in[1], in[2], w[0], w[2], w[3], 0, 0, layer.stride, layer.padding};
    if (g.hin + 2 * g.pad < g.kh || g.win + 2 * g.pad < g.kw) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    g.hout = (g.hin + 2 * g.pad - g.kh) / g.stride + 1;
    g.wout = (g.win + 2 * g.pad - g.kw) / g.stride + 1;
    return g;
}

std::size_t dense_fan_in(const Layer& layer, const std::vector<std::size_t>& in) {
    const std::size_t n = Tensor::count(in);
    if (n != layer.weights.dim(1)) {
        throw std::invalid_argument("dense: input has " + std::to_string(n) + " values, weights expect " +
                                    std::to_string(layer.weights.dim(1)));
    }
    return n;
}

// Visits every (output index, weight index, input index) triple of a linear
// layer in a fixed order, calling `tap` for each and `finish` once per output
// after its taps. Shared by all linear kernels so that accumulation order is
// identical between exact, interval and backward passes.
template <class Tap, class Finish>
void for_each_tap(const Layer& layer, const std::vector<std::size_t>& in, Tap&& tap, Finish&& finish) {
    if (layer.kind == LayerKind::dense) {
        const std::size_t n = dense_fan_in(layer, in);
        const std::size_t m = layer.weights.dim(0);
        for (std::size_t o = 0; o < m; ++o) {
            for (std::size_t k = 0; k < n; ++k) tap(o, o * n + k, k);
            finish(o, o);
        }
        return;
    }
    const ConvGeometry g = conv_geometry(layer, in);
    for (std::size_t co = 0; co < g.cout; ++co) {
        for (std::size_t oh = 0; oh < g.hout; ++oh) {
            for (std::size_t ow = 0; ow < g.wout; ++ow) {
                const std::size_t o = (co * g.hout + oh) * g.wout + ow;
                for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    for (std::size_t a = 0; a < g.kh; ++a) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + a) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.hin)) continue;
                        for (std::size_t b = 0; b < g.kw; ++b) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + b) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.win)) continue;
                            tap(o, ((co * g.cin + ci) * g.kh + a) * g.kw + b,
                                (ci * g.hin + static_cast<std::size_t>(ih)) * g.win + static_cast<std::size_t>(iw));
                        }
                    }
                }
                finish(o, co);
            }
        }
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void accumulate(Tensor* dst, const std::vector<std::size_t>& shape) {
    if (dst && dst->shape() != shape) *dst = Tensor(shape);
}

}  // namespace

std::vector<std::size_t> output_shape(const Layer& layer, const std::vector<std::size_t>& in) {
    switch (layer.kind) {
    case LayerKind::conv2d: {
        const ConvGeometry g = conv_geometry(layer, in);
        return {g.cout, g.hout, g.wout};
    }
    case LayerKind::dense:
        dense_fan_in(layer, in);
        return {layer.weights.dim(0)};
    default:
        return in;
    }
}

Tensor apply_layer(const Layer& layer, const Tensor& x) {
    Tensor y(output_shape(layer, x.shape()));
    switch (layer.kind) {
    case LayerKind::relu:
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = std::max(x[k], 0.0);
        return y;
    case LayerKind::sigmoid:
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = sigmoid(x[k]);
        return y;
    default:
        break;
    }
    const double* w = layer.weights.data();
    const double* in = x.data();
    double acc = 0.0;
    for_each_tap(
        layer, x.shape(), [&](std::size_t, std::size_t wi, std::size_t xi) { acc += w[wi] * in[xi]; },
        [&](std::size_t o, std::size_t bi) {
            y[o] = acc + layer.bias[bi];
            acc = 0.0;
        });
    return y;
}

IntervalTensor apply_layer_interval(const Layer& layer, const IntervalTensor& x) {
    const auto shape = output_shape(layer, x.shape());
    Tensor lo(shape);
    Tensor hi(shape);
    switch (layer.kind) {
    case LayerKind::relu:
        for (std::size_t k = 0; k < x.lower.size(); ++k) {
            lo[k] = std::max(x.lower[k], 0.0);
            hi[k] = std::max(x.upper[k], 0.0);
        }
        return IntervalTensor(std::move(lo), std::move(hi));
    case LayerKind::sigmoid:
        for (std::size_t k = 0; k < x.lower.size(); ++k) {
            lo[k] = sigmoid(x.lower[k]);
            hi[k] = sigmoid(x.upper[k]);
        }
        return IntervalTensor(std::move(lo), std::move(hi));
    default:
        break;
    }
    const double* w = layer.weights.data();
    const double* l = x.lower.data();
    const double* u = x.upper.data();
    double acc_lo = 0.0;
    double acc_hi = 0.0;
    for_each_tap(
        layer, x.shape(),
        [&](std::size_t, std::size_t wi, std::size_t xi) {
            const double wv = w[wi];
            if (wv >= 0.0) {
                acc_lo += wv * l[xi];
                acc_hi += wv * u[xi];
            } else {
                acc_lo += wv * u[xi];
                acc_hi += wv * l[xi];
            }
        },
        [&](std::size_t o, std::size_t bi) {
            lo[o] = acc_lo + layer.bias[bi];
            hi[o] = acc_hi + layer.bias[bi];
            acc_lo = 0.0;
            acc_hi = 0.0;
        });
    return IntervalTensor(std::move(lo), std::move(hi));
}

void layer_backward(const Layer& layer, const Tensor& x, const Tensor& y, const Tensor& gy, Tensor* gx,
                    Tensor* gw, Tensor* gb) {
    accumulate(gx, x.shape());
    switch (layer.kind) {
    case LayerKind::relu:
        if (gx) {
            for (std::size_t k = 0; k < x.size(); ++k) (*gx)[k] += x[k] > 0.0 ? gy[k] : 0.0;
        }
        return;
    case LayerKind::sigmoid:
        if (gx) {
            for (std::size_t k = 0; k < x.size(); ++k) (*gx)[k] += gy[k] * y[k] * (1.0 - y[k]);
        }
        return;
    default:
        break;
    }
    accumulate(gw, layer.weights.shape());
    accumulate(gb, layer.bias.shape());
    const double* w = layer.weights.data();
    const double* in = x.data();
    const double* g = gy.data();
    for_each_tap(
        layer, x.shape(),
        [&](std::size_t o, std::size_t wi, std::size_t xi) {
            if (gx) (*gx)[xi] += w[wi] * g[o];
            if (gw) (*gw)[wi] += g[o] * in[xi];
        },
        [&](std::size_t o, std::size_t bi) {
            if (gb) (*gb)[bi] += g[o];
        });
}

void layer_backward_interval(const Layer& layer, const IntervalTensor& x, const IntervalTensor& y,
                             const BoundGrads& gy, BoundGrads* gx, Tensor* gw, Tensor* gb) {
    if (gx) {
        accumulate(&gx->lower, x.shape());
        accumulate(&gx->upper, x.shape());
    }
    switch (layer.kind) {
    case LayerKind::relu:
    case LayerKind::sigmoid:
        if (gx) {
            layer_backward(layer, x.lower, y.lower, gy.lower, &gx->lower, nullptr, nullptr);
            layer_backward(layer, x.upper, y.upper, gy.upper, &gx->upper, nullptr, nullptr);
        }
        return;
    default:
        break;
    }
    accumulate(gw, layer.weights.shape());
    accumulate(gb, layer.bias.shape());
    const double* w = layer.weights.data();
    const double* l = x.lower.data();
    const double* u = x.upper.data();
    const double* glo = gy.lower.data();
    const double* ghi = gy.upper.data();
    for_each_tap(
        layer, x.shape(),
        [&](std::size_t o, std::size_t wi, std::size_t xi) {
            const double wv = w[wi];
            // Nonnegative weights: lo uses l, hi uses u. Negative: swapped.
            if (wv >= 0.0) {
                if (gx) {
                    gx->lower[xi] += wv * glo[o];
                    gx->upper[xi] += wv * ghi[o];
                }
                if (gw) (*gw)[wi] += glo[o] * l[xi] + ghi[o] * u[xi];
            } else {
                if (gx) {
                    gx->upper[xi] += wv * glo[o];
                    gx->lower[xi] += wv * ghi[o];
                }
                if (gw) (*gw)[wi] += glo[o] * u[xi] + ghi[o] * l[xi];
            }
        },
        [&](std::size_t o, std::size_t bi) {
            if (gb) (*gb)[bi] += glo[o] + ghi[o];
        });
}

Tensor run_layers(const std::vector<Layer>& layers, Tensor x) {
    for (const auto& l : layers) x = apply_layer(l, x);
    return x;
}

IntervalTensor run_layers_interval(const std::vector<Layer>& layers, IntervalTensor x) {
    for (const auto& l : layers) x = apply_layer_interval(l, x);
    return x;
}

Tensor as_grid(Tensor t, std::size_t channels, std::size_t rows, std::size_t cols) {
    if (t.size() != channels * rows * cols) {
        throw std::invalid_argument("head output " + shape_string(t.shape()) + " does not fit a (" +
                                    std::to_string(channels) + "," + std::to_string(rows) + "," +
                                    std::to_string(cols) + ") grid");
    }
    if (t.rank() == 3 && t.dim(0) == channels) return t;
    return t.reshaped({channels, rows, cols});
}

HeadOutputs run_header(const Header& h, Tensor features, std::size_t from, std::size_t rows, std::size_t cols) {
    for (std::size_t k = from; k < h.trunk.size(); ++k) features = apply_layer(h.trunk[k], features);
    return {as_grid(run_layers(h.cls, features), 1, rows, cols), as_grid(run_layers(h.reg, features), 6, rows, cols)};
}

IntervalHeadOutputs run_header_interval(const Header& h, IntervalTensor features, std::size_t from,
                                        std::size_t rows, std::size_t cols) {
    for (std::size_t k = from; k < h.trunk.size(); ++k) features = apply_layer_interval(h.trunk[k], features);
    IntervalTensor cls = run_layers_interval(h.cls, features);
    IntervalTensor reg = run_layers_interval(h.reg, features);
    return {IntervalTensor(as_grid(std::move(cls.lower), 1, rows, cols), as_grid(std::move(cls.upper), 1, rows, cols)),
            IntervalTensor(as_grid(std::move(reg.lower), 6, rows, cols), as_grid(std::move(reg.upper), 6, rows, cols))};
}

PredictionGrid to_prediction_grid(const HeadOutputs& heads, std::size_t rows, std::size_t cols) {
    PredictionGrid g(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            CellOutput& c = g.at(i, j);
            c.pr = heads.cls.at(0, i, j);
            for (std::size_t k = 0; k < 6; ++k) c.channel(k + 1) = heads.reg.at(k, i, j);
        }
    }
    return g;
}

namespace {

void apply_ownership(PredictionGrid& g, const CriticalMask& mask, bool critical) {
    if (mask.rows != g.rows || mask.cols != g.cols) {
        throw std::invalid_argument("critical mask does not match the output grid");
    }
    for (std::size_t k = 0; k < g.cells.size(); ++k) {
        g.owned[k] = mask.critical[k] == critical;
        if (!g.owned[k]) g.cells[k] = CellOutput{};
    }
}

void check_perturbation_index(const Network& net) {
    if (net.perturbation_index > net.critical.trunk.size()) {
        throw std::invalid_argument("perturbation_index exceeds the critical header trunk");
    }
}

}  // namespace

Tensor backbone_features(const Network& net, const Tensor& input) {
    return run_layers(net.backbone, input);
}

Tensor perturbation_features(const Network& net, const Tensor& input) {
    check_perturbation_index(net);
    Tensor f = backbone_features(net, input);
    for (std::size_t k = 0; k < net.perturbation_index; ++k) f = apply_layer(net.critical.trunk[k], f);
    return f;
}

DetectorOutput forward_exact(const Network& net, const Tensor& input, const CriticalMask& mask) {
    const Tensor f = backbone_features(net, input);
    DetectorOutput out;
    out.critical = to_prediction_grid(run_header(net.critical, f, 0, mask.rows, mask.cols), mask.rows, mask.cols);
    out.noncritical =
        to_prediction_grid(run_header(net.noncritical, f, 0, mask.rows, mask.cols), mask.rows, mask.cols);
    apply_ownership(out.critical, mask, true);
    apply_ownership(out.noncritical, mask, false);
    return out;
}

PredictionGrid critical_from_features(const Network& net, const Tensor& features, const CriticalMask& mask) {
    check_perturbation_index(net);
    PredictionGrid g = to_prediction_grid(run_header(net.critical, features, net.perturbation_index, mask.rows, mask.cols),
                                          mask.rows, mask.cols);
    apply_ownership(g, mask, true);
    return g;
}

IntervalPredictionGrid forward_interval_from_features(const Network& net, const Tensor& features, double xi,
                                                      const CriticalMask& mask) {
    if (!(xi >= 0.0)) throw std::invalid_argument("forward_interval: perturbation must be nonnegative");
    check_perturbation_index(net);
    const IntervalHeadOutputs h = run_header_interval(net.critical, IntervalTensor::widened(features, xi),
                                                      net.perturbation_index, mask.rows, mask.cols);
    IntervalPredictionGrid out{to_prediction_grid({h.cls.lower, h.reg.lower}, mask.rows, mask.cols),
                               to_prediction_grid({h.cls.upper, h.reg.upper}, mask.rows, mask.cols)};
    apply_ownership(out.lower, mask, true);
    apply_ownership(out.upper, mask, true);
    return out;
}

IntervalPredictionGrid forward_interval(const Network& net, const Tensor& input, double xi, const CriticalMask& mask) {
    return forward_interval_from_features(net, perturbation_features(net, input), xi, mask);
}

namespace {

Tensor he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

Layer conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    return Layer::conv2d(he_uniform({out, in, k, k}, in * k * k, rng), Tensor({out}), stride, k / 2);
}

}  // namespace

Network make_detector(const GridSpec& grid, const NetworkShape& shape, std::uint64_t seed) {
    grid.validate();
    Rng rng(seed);
    const std::size_t s1 = grid.downscale % 2 == 0 ? 2 : 1;
    const std::size_t s2 = grid.downscale / s1;
    const std::size_t cb = shape.backbone_channels;
    const std::size_t ch = shape.header_channels;
    Network net;
    net.backbone = {conv(grid.input_cells_h, cb, 3, s1, rng), Layer::relu(), conv(cb, cb, 3, s2, rng), Layer::relu()};
    Header h;
    h.trunk = {conv(cb, ch, 3, 1, rng), Layer::relu(), conv(ch, ch, 3, 1, rng), Layer::relu()};
    h.cls = {conv(ch, 1, 1, 1, rng), Layer::sigmoid()};
    h.reg = {conv(ch, 6, 1, 1, rng)};
    net.critical = h;
    net.noncritical = h;
    return net;
}

// ---------------------------------------------------------------------------
// Checkpoint text format
//
//   safebev-checkpoint 1
//   perturbation_index <n>
//   baseline_trained <0|1>
//   hardened <0|1>
//   section <name> <layer count>
//   layer <kind> <stride> <padding>
//   weights <rank> <dims...>
//   <values>
//   bias <rank> <dims...>
//   <values>
//
// Values are written with 17 significant digits, which round-trips doubles.

namespace {

constexpr const char* kCheckpointMagic = "safebev-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_tensor(std::ostream& os, const char* tag, const Tensor& t) {
    os << tag << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n';
    char buf[40];
    for (std::size_t k = 0; k < t.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", t[k]);
        if (k) os << ' ';
        os << buf;
    }
    os << '\n';
}

void write_section(std::ostream& os, const std::string& name, const std::vector<Layer>& layers) {
    os << "section " << name << ' ' << layers.size() << '\n';
    for (const auto& l : layers) {
        os << "layer " << to_string(l.kind) << ' ' << l.stride << ' ' << l.padding << '\n';
        if (l.has_parameters()) {
            write_tensor(os, "weights", l.weights);
            write_tensor(os, "bias", l.bias);
        }
    }
}

class CheckpointReader {
public:
    explicit CheckpointReader(std::istream& is) : is_(is) {}

    std::string word() {
        std::string w;
        if (!(is_ >> w)) fail("unexpected end of file");
        return w;
    }

    void expect(const std::string& w) {
        const std::string got = word();
        if (got != w) fail("expected '" + w + "', found '" + got + "'");
    }

    std::size_t count() {
        const std::string w = word();
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(w, &pos);
        } catch (const std::exception&) {
            fail("expected a count, found '" + w + "'");
        }
        if (pos != w.size()) fail("expected a count, found '" + w + "'");
        return static_cast<std::size_t>(v);
    }

    double real() {
        const std::string w = word();
        char* end = nullptr;
        const double v = std::strtod(w.c_str(), &end);
        if (end != w.c_str() + w.size()) fail("malformed number '" + w + "'");
        return v;
    }

    Tensor tensor(const std::string& tag) {
        expect(tag);
        const std::size_t rank = count();
        if (rank > 8) fail("implausible tensor rank");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = count();
        Tensor t(shape);
        for (double& v : t.values()) v = real();
        return t;
    }

    std::vector<Layer> section(const std::string& name) {
        expect("section");
        expect(name);
        const std::size_t n = count();
        std::vector<Layer> layers;
        for (std::size_t k = 0; k < n; ++k) {
            expect("layer");
            Layer l;
            try {
                l.kind = layer_kind_from_string(word());
            } catch (const std::invalid_argument& e) {
                fail(e.what());
            }
            l.stride = count();
            l.padding = count();
            if (l.has_parameters()) {
                l.weights = tensor("weights");
                l.bias = tensor("bias");
            }
            try {
                l.validate();
            } catch (const std::invalid_argument& e) {
                fail(e.what());
            }
            layers.push_back(std::move(l));
        }
        return layers;
    }

    [[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("checkpoint: " + msg); }

private:
    std::istream& is_;
};

}  // namespace

void save_checkpoint(const Network& net, std::ostream& os) {
    os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    os << "perturbation_index " << net.perturbation_index << '\n';
    os << "baseline_trained " << (net.baseline_trained ? 1 : 0) << '\n';
    os << "hardened " << (net.hardened ? 1 : 0) << '\n';
    write_section(os, "backbone", net.backbone);
    write_section(os, "critical.trunk", net.critical.trunk);
    write_section(os, "critical.cls", net.critical.cls);
    write_section(os, "critical.reg", net.critical.reg);
    write_section(os, "noncritical.trunk", net.noncritical.trunk);
    write_section(os, "noncritical.cls", net.noncritical.cls);
    write_section(os, "noncritical.reg", net.noncritical.reg);
}

Network load_checkpoint(std::istream& is) {
    CheckpointReader r(is);
    r.expect(kCheckpointMagic);
    const std::size_t version = r.count();
    if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
    Network net;
    r.expect("perturbation_index");
    net.perturbation_index = r.count();
    r.expect("baseline_trained");
    net.baseline_trained = r.count() != 0;
    r.expect("hardened");
    net.hardened = r.count() != 0;
    net.backbone = r.section("backbone");
    net.critical.trunk = r.section("critical.trunk");
    net.critical.cls = r.section("critical.cls");
    net.critical.reg = r.section("critical.reg");
    net.noncritical.trunk = r.section("noncritical.trunk");
    net.noncritical.cls = r.section("noncritical.cls");
    net.noncritical.reg = r.section("noncritical.reg");
    if (net.perturbation_index > net.critical.trunk.size()) r.fail("perturbation_index out of range");
    return net;
}

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    save_checkpoint(net, os);
    if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return load_checkpoint(is);
}

}  // namespace safebev
