#include "safebev/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "safebev/random.hpp"
#include "safebev/scenes.hpp"

namespace safebev {

double max_trig_combination(double a, double b, double kappa) {
    if (!(a >= 0.0) || !(b >= 0.0)) throw std::invalid_argument("max_trig_combination: coefficients must be nonnegative");
    if (!(kappa >= 0.0)) throw std::invalid_argument("max_trig_combination: kappa must be nonnegative");
    const double alpha = std::min(kappa, std::atan2(a, b));
    return a * std::sin(alpha) + b * std::cos(alpha);
}

double max_trig_combination_search(double a, double b, double kappa, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("max_trig_combination_search: step must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(2.0 * kappa / step));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= n; ++k) {
        const double alpha = n == 0 ? 0.0 : -kappa + 2.0 * kappa * static_cast<double>(k) / static_cast<double>(n);
        best = std::max(best, a * std::sin(alpha) + b * std::cos(alpha));
    }
    return best;
}

BufferBounds buffer_bounds(const CellOutput& o, const SafetySpec& spec, const BufferOptions& opts) {
    spec.validate();
    const double kappa = spec.kappa;
    const double w = std::pow(10.0, o.log_w);
    const double l = std::pow(10.0, o.log_l);
    const double w_up = std::pow(10.0, o.log_w + spec.delta(6));
    const double l_up = std::pow(10.0, o.log_l + spec.delta(7));

    const double len_max = max_trig_combination(w_up, l_up, kappa);
    const double wid_max = max_trig_combination(l_up, w_up, kappa);
    if (opts.cross_check) {
        const double len_search = max_trig_combination_search(w_up, l_up, kappa, opts.grid_step);
        const double wid_search = max_trig_combination_search(l_up, w_up, kappa, opts.grid_step);
        if (std::abs(len_search - len_max) > opts.tolerance || std::abs(wid_search - wid_max) > opts.tolerance) {
            throw ConsistencyError("buffer_bounds: closed form and grid search disagree");
        }
    }

    BufferBounds bb;
    bb.kappa_used = kappa;
    bb.d = std::hypot(spec.delta(4), spec.delta(5)) + kBufferSlack;
    bb.d_l = kBufferSlack + 0.5 * (len_max - l);
    bb.d_w = kBufferSlack + 0.5 * (wid_max - w);
    return bb;
}

OrientedBox enlarge_box(const OrientedBox& b, const BufferBounds& bb) {
    OrientedBox out = b;
    out.length += 2.0 * (bb.d + bb.d_l);
    out.width += 2.0 * (bb.d + bb.d_w);
    return out;
}

std::optional<std::string> size_cap_warning(const OrientedBox& b, const SizeCaps& caps) {
    std::string msg;
    if (b.length > caps.max_length) {
        msg += "length " + format_real(b.length) + " m exceeds cap " + format_real(caps.max_length) + " m";
    }
    if (b.width > caps.max_width) {
        if (!msg.empty()) msg += "; ";
        msg += "width " + format_real(b.width) + " m exceeds cap " + format_real(caps.max_width) + " m";
    }
    if (msg.empty()) return std::nullopt;
    return msg;
}

// ---------------------------------------------------------------------------

namespace {

// Largest alpha in [0, hi] admissible at theta, found by bisection assuming the
// admissible set is an interval around 0 (a heuristic; the caller re-checks).
double admissible_edge(double theta, double sign, double hi, double d2, double d3) {
    if (trig_admissible(theta, sign * hi, d2, d3)) return hi;
    double lo = 0.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (trig_admissible(theta, sign * mid, d2, d3) ? lo : hi) = mid;
    }
    return lo;
}

double unit_or_edge(Rng& rng, bool edge) {
    if (!edge) return rng.uniform(-1.0, 1.0);
    return rng.uniform() < 0.5 ? -1.0 : 1.0;
}

}  // namespace

std::size_t check_lemma1(std::size_t trials, const SafetySpec& spec, std::uint64_t seed, const Lemma1Options& opts) {
    if (trials == 0) throw std::invalid_argument("check_lemma1: trials must be positive");
    spec.validate();
    const GridSpec grid;
    const CellIndex cell{0, 0};
    const double d2 = spec.delta(2);
    const double d3 = spec.delta(3);
    // Angle draws reach well past kappa so that a too-small kappa would show up.
    const double reach = std::min(std::numbers::pi / 2.0, 2.0 * spec.kappa + 1e-3);
    BufferOptions bopts;
    bopts.cross_check = false;
    Rng rng(seed);

    std::size_t violations = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        CellOutput o;
        const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
        o.pr = 0.9;
        o.cos_t = std::cos(theta);
        o.sin_t = std::sin(theta);
        o.dx = rng.uniform(-1.0, 1.0);
        o.dy = rng.uniform(-1.0, 1.0);
        o.log_w = rng.uniform(std::log10(1.5), std::log10(2.5));
        o.log_l = rng.uniform(std::log10(3.0), std::log10(6.0));

        LabelCell lb;
        lb.positive = true;
        const bool edge = t % 2 == 1;
        for (std::size_t attempt = 0;; ++attempt) {
            double alpha = 0.0;
            // alpha = 0 is always admissible; fall back to it when draws keep missing
            if ((d2 > 0.0 || d3 > 0.0) && attempt < 1000) {
                if (edge) {
                    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                    alpha = sign * admissible_edge(theta, sign, reach, d2, d3) * (1.0 - 1e-12 * rng.uniform());
                } else {
                    alpha = rng.uniform(-reach, reach);
                }
                if (!trig_admissible(theta, alpha, d2, d3)) continue;
            }
            constexpr double shrink = 1.0 - 1e-12;
            lb.targets = {std::cos(theta + alpha),
                          std::sin(theta + alpha),
                          o.dx + shrink * unit_or_edge(rng, edge) * spec.delta(4),
                          o.dy + shrink * unit_or_edge(rng, edge) * spec.delta(5),
                          o.log_w + shrink * unit_or_edge(rng, edge) * spec.delta(6),
                          o.log_l + shrink * unit_or_edge(rng, edge) * spec.delta(7)};
            if (cell_loss(o, lb, spec) == 0.0) break;
        }

        CellOutput truth_out;
        truth_out.pr = 1.0;
        for (std::size_t k = 1; k < CellOutput::kChannels; ++k) truth_out.channel(k) = lb.targets[k - 1];
        const OrientedBox truth = decode_cell(grid, cell, truth_out);
        OrientedBox pred = decode_cell(grid, cell, o);
        if (opts.enlarge) pred = enlarge_box(pred, buffer_bounds(o, spec, bopts));
        if (!contains(pred, truth)) ++violations;
    }
    return violations;
}

// ---------------------------------------------------------------------------

std::size_t Lemma2Report::eligible() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const Lemma2Cell& c) { return c.eligible; }));
}

std::size_t Lemma2Report::skipped() const { return cells.size() - eligible(); }

std::size_t Lemma2Report::violations() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const Lemma2Cell& c) {
        return c.eligible && !(c.a_ok && c.b_ok && c.c_ok);
    }));
}

Lemma2Report check_lemma2(const Network& net, std::span<const Sample> data, double xi, std::size_t samples,
                          const SafetySpec& spec, const GridSpec& grid, std::uint64_t seed, const LossOptions& loss) {
    if (!(xi >= 0.0)) throw std::invalid_argument("check_lemma2: xi must be nonnegative");
    if (samples == 0) throw std::invalid_argument("check_lemma2: samples must be positive");
    spec.validate(grid);
    const CriticalMask mask = critical_mask(spec, grid);
    const std::size_t draws = xi == 0.0 ? 1 : samples;
    const double thr = spec.class_threshold;

    Lemma2Report report;
    report.xi = xi;
    report.samples_per_cell = draws;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const Sample& smp = data[s];
        const Tensor features = perturbation_features(net, smp.input);
        const IntervalPredictionGrid bounds = forward_interval_from_features(net, features, xi, mask);

        std::vector<Lemma2Cell> cells;
        for (std::size_t i = 0; i < mask.rows; ++i) {
            for (std::size_t j = 0; j < mask.cols; ++j) {
                if (!mask.at(i, j)) continue;
                Lemma2Cell c;
                c.sample = s;
                c.cell = {i, j};
                c.positive = smp.labels.at(i, j).positive;
                c.robust_loss = robust_cell_loss({bounds.lower.at(i, j), bounds.upper.at(i, j)}, smp.labels.at(i, j),
                                                 spec, loss);
                c.eligible = c.robust_loss == 0.0;
                cells.push_back(c);
            }
        }

        Rng rng(mix_seed(seed, s));
        for (std::size_t t = 0; t < draws; ++t) {
            Tensor perturbed = features;
            if (xi > 0.0) {
                const bool corner = t >= draws / 2;
                for (double& v : perturbed.values()) {
                    v += corner ? (rng.uniform() < 0.5 ? -xi : xi) : rng.uniform(-xi, xi);
                }
            }
            const PredictionGrid out = critical_from_features(net, perturbed, mask);
            for (Lemma2Cell& c : cells) {
                if (!c.eligible) continue;
                const CellOutput& o = out.at(c.cell.i, c.cell.j);
                const LabelCell& lb = smp.labels.at(c.cell.i, c.cell.j);
                const double cls_excess = c.positive ? thr - o.pr : o.pr - thr;
                if (cls_excess > kLemma2Tolerance) (c.positive ? c.a_ok : c.b_ok) = false;
                c.worst_excess = std::max(c.worst_excess, cls_excess);
                if (c.positive || loss.negative_cell_regression) {
                    for (std::size_t k = 2; k <= 7; ++k) {
                        const double excess = std::abs(o.channel(k - 1) - lb.targets[k - 2]) - spec.delta(k);
                        if (excess > kLemma2Tolerance) c.c_ok = false;
                        c.worst_excess = std::max(c.worst_excess, excess);
                    }
                }
            }
        }
        for (Lemma2Cell& c : cells) c.worst_excess = std::max(0.0, c.worst_excess);
        report.cells.insert(report.cells.end(), cells.begin(), cells.end());
    }
    return report;
}

void write_lemma2_report(const Lemma2Report& r, std::ostream& text, std::ostream* csv) {
    text << "xi: " << format_real(r.xi) << '\n'
         << "samples per cell: " << r.samples_per_cell << '\n'
         << "critical cells: " << r.cells.size() << '\n'
         << "eligible cells: " << r.eligible() << '\n'
         << "skipped cells (nonzero robust loss): " << r.skipped() << '\n'
         << "violations: " << r.violations() << '\n';
    for (const auto& c : r.cells) {
        if (c.eligible && !(c.a_ok && c.b_ok && c.c_ok)) {
            text << "  violation at sample " << c.sample << " cell <" << c.cell.i << ',' << c.cell.j << ">:"
                 << (c.a_ok ? "" : " a") << (c.b_ok ? "" : " b") << (c.c_ok ? "" : " c")
                 << " excess " << format_real(c.worst_excess) << '\n';
        }
    }
    if (csv != nullptr) {
        *csv << "sample,i,j,positive,robust_loss,eligible,a_ok,b_ok,c_ok,worst_excess\n";
        for (const auto& c : r.cells) {
            *csv << c.sample << ',' << c.cell.i << ',' << c.cell.j << ',' << c.positive << ','
                 << format_real(c.robust_loss) << ',' << c.eligible << ',' << c.a_ok << ',' << c.b_ok << ','
                 << c.c_ok << ',' << format_real(c.worst_excess) << '\n';
        }
    }
}

std::vector<BufferRecord> certify_buffers(const PredictionGrid& critical, std::size_t sample, const SafetySpec& spec,
                                          const GridSpec& grid, const BufferOptions& opts) {
    std::vector<BufferRecord> out;
    for (std::size_t i = 0; i < critical.rows; ++i) {
        for (std::size_t j = 0; j < critical.cols; ++j) {
            if (!critical.owned[i * critical.cols + j]) continue;
            BufferRecord r;
            r.sample = sample;
            r.cell = {i, j};
            r.output = critical.at(i, j);
            r.bounds = buffer_bounds(r.output, spec, opts);
            r.raw = decode_cell(grid, r.cell, r.output);
            r.enlarged = enlarge_box(r.raw, r.bounds);
            out.push_back(r);
        }
    }
    return out;
}

void write_buffer_records(std::span<const BufferRecord> records, std::ostream& csv) {
    csv << "sample,i,j,pr,d,d_l,d_w,kappa,raw_width,raw_length,enlarged_width,enlarged_length\n";
    for (const auto& r : records) {
        csv << r.sample << ',' << r.cell.i << ',' << r.cell.j << ',' << format_real(r.output.pr) << ','
            << format_real(r.bounds.d) << ',' << format_real(r.bounds.d_l) << ',' << format_real(r.bounds.d_w) << ','
            << format_real(r.bounds.kappa_used) << ',' << format_real(r.raw.width) << ','
            << format_real(r.raw.length) << ',' << format_real(r.enlarged.width) << ','
            << format_real(r.enlarged.length) << '\n';
    }
}

}  // namespace safebev
