#include "safebev/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

#include "safebev/scenes.hpp"

namespace safebev {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    return x;
}

std::uint64_t parse_count(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': integer out of range");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["seed"] = [](RunConfig& c, const auto& k, const auto& v) { c.seed = parse_count(k, v); };
        t["grid.input_cells_l"] = [](RunConfig& c, const auto& k, const auto& v) { c.grid.input_cells_l = parse_count(k, v); };
        t["grid.input_cells_w"] = [](RunConfig& c, const auto& k, const auto& v) { c.grid.input_cells_w = parse_count(k, v); };
        t["grid.input_cells_h"] = [](RunConfig& c, const auto& k, const auto& v) { c.grid.input_cells_h = parse_count(k, v); };
        t["grid.cell_size"] = [](RunConfig& c, const auto& k, const auto& v) { c.grid.cell_size = parse_real(k, v); };
        t["grid.downscale"] = [](RunConfig& c, const auto& k, const auto& v) { c.grid.downscale = parse_count(k, v); };
        t["safety.gamma_l"] = [](RunConfig& c, const auto& k, const auto& v) { c.safety.gamma_l = parse_real(k, v); };
        t["safety.gamma_w"] = [](RunConfig& c, const auto& k, const auto& v) { c.safety.gamma_w = parse_real(k, v); };
        t["safety.class_threshold"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.safety.class_threshold = parse_real(k, v);
        };
        for (std::size_t ch = 2; ch <= 7; ++ch) {
            t["safety.delta" + std::to_string(ch)] = [ch](RunConfig& c, const auto& k, const auto& v) {
                c.safety.deltas[ch - 2] = parse_real(k, v);
            };
        }
        t["safety.kappa"] = [](RunConfig& c, const auto& k, const auto& v) {
            if (v == "auto") {
                c.kappa_auto = true;
            } else {
                c.kappa_auto = false;
                c.safety.kappa = parse_real(k, v);
            }
        };
        t["post.mode"] = [](RunConfig& c, const auto& k, const auto& v) {
            try {
                c.post_mode = post_mode_from_string(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("config key '" + k + "': " + e.what());
            }
        };
        t["post.iou_threshold"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.iou_threshold = v == "auto" ? -1.0 : parse_real(k, v);
        };
        t["post.nms_iou_threshold"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.nms_iou_threshold = parse_real(k, v);
        };
        t["train.stage"] = [](RunConfig& c, const auto& k, const auto& v) {
            try {
                c.train.stage = train_stage_from_string(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("config key '" + k + "': " + e.what());
            }
        };
        t["train.xi"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.xi = parse_real(k, v); };
        t["train.learning_rate"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.train.learning_rate = parse_real(k, v);
        };
        t["train.epochs"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.epochs = parse_count(k, v); };
        t["train.batch_size"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch_size = parse_count(k, v); };
        t["train.negative_cell_regression"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.train.loss.negative_cell_regression = parse_bool(k, v);
        };
        t["net.backbone_channels"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.net.backbone_channels = parse_count(k, v);
        };
        t["net.header_channels"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.net.header_channels = parse_count(k, v);
        };
        t["net.perturbation_index"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.perturbation_index = parse_count(k, v);
        };
        t["caps.max_length"] = [](RunConfig& c, const auto& k, const auto& v) { c.caps.max_length = parse_real(k, v); };
        t["caps.max_width"] = [](RunConfig& c, const auto& k, const auto& v) { c.caps.max_width = parse_real(k, v); };
        return t;
    }();
    return table;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
}

void apply_config(RunConfig& cfg, std::istream& is, const std::string& origin) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
        }
        try {
            apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    apply_config(cfg, is, path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected key=value");
    apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::finalize() {
    try {
        grid.validate();
        if (kappa_auto) safety.kappa = kappa_conservative(safety.delta(2), safety.delta(3));
        safety.validate(grid);
        post().validate();
        PostConfig{safety.class_threshold, nms_iou_threshold, PostMode::nms}.validate();
        train.seed = seed;
        train.validate();
        if (net.backbone_channels == 0 || net.header_channels == 0) {
            throw std::invalid_argument("net: channel counts must be positive");
        }
        if (!(caps.max_length > 0.0) || !(caps.max_width > 0.0)) {
            throw std::invalid_argument("caps: size caps must be positive");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
}

PostConfig RunConfig::post() const {
    return {safety.class_threshold, iou_threshold < 0.0 ? default_iou_threshold(post_mode) : iou_threshold, post_mode};
}

std::string describe(const RunConfig& c) {
    std::ostringstream os;
    os << "seed = " << c.seed << '\n'
       << "grid.input_cells_l = " << c.grid.input_cells_l << '\n'
       << "grid.input_cells_w = " << c.grid.input_cells_w << '\n'
       << "grid.input_cells_h = " << c.grid.input_cells_h << '\n'
       << "grid.cell_size = " << format_real(c.grid.cell_size) << '\n'
       << "grid.downscale = " << c.grid.downscale << '\n'
       << "safety.gamma_l = " << format_real(c.safety.gamma_l) << '\n'
       << "safety.gamma_w = " << format_real(c.safety.gamma_w) << '\n'
       << "safety.class_threshold = " << format_real(c.safety.class_threshold) << '\n';
    for (std::size_t ch = 2; ch <= 7; ++ch) {
        os << "safety.delta" << ch << " = " << format_real(c.safety.delta(ch)) << '\n';
    }
    os << "safety.kappa = " << format_real(c.safety.kappa) << (c.kappa_auto ? "  # auto" : "") << '\n'
       << "post.mode = " << to_string(c.post_mode) << '\n'
       << "post.iou_threshold = " << format_real(c.post().iou_threshold) << '\n'
       << "post.nms_iou_threshold = " << format_real(c.nms_iou_threshold) << '\n'
       << "train.stage = " << to_string(c.train.stage) << '\n'
       << "train.xi = " << format_real(c.train.xi) << '\n'
       << "train.learning_rate = " << format_real(c.train.learning_rate) << '\n'
       << "train.epochs = " << c.train.epochs << '\n'
       << "train.batch_size = " << c.train.batch_size << '\n'
       << "train.negative_cell_regression = " << (c.train.loss.negative_cell_regression ? "true" : "false") << '\n'
       << "net.backbone_channels = " << c.net.backbone_channels << '\n'
       << "net.header_channels = " << c.net.header_channels << '\n'
       << "net.perturbation_index = " << c.perturbation_index << '\n'
       << "caps.max_length = " << format_real(c.caps.max_length) << '\n'
       << "caps.max_width = " << format_real(c.caps.max_width) << '\n';
    return os.str();
}

}  // namespace safebev
