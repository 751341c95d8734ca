#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "safebev/certify.hpp"
#include "safebev/geometry.hpp"
#include "safebev/network.hpp"
#include "safebev/postprocess.hpp"
#include "safebev/safety_spec.hpp"
#include "safebev/training.hpp"

namespace safebev {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a CLI run needs. Text form: one `key = value` per line, `#`
/// starts a comment. See README for the key list.
struct RunConfig {
    GridSpec grid;
    SafetySpec safety;
    /// Derive safety.kappa from delta2/delta3 (`safety.kappa = auto`).
    bool kappa_auto = true;
    PostMode post_mode = PostMode::nmi;
    /// Negative selects the mode's default.
    double iou_threshold = -1.0;
    double nms_iou_threshold = 0.5;
    TrainConfig train;
    NetworkShape net;
    std::size_t perturbation_index = 0;
    SizeCaps caps;
    std::uint64_t seed = 1;

    /// Resolves kappa and validates every section.
    void finalize();

    [[nodiscard]] PostConfig post() const;
};

/// Sets one key; throws ConfigError naming the key on unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies every setting in the stream. `origin` prefixes error messages.
void apply_config(RunConfig& cfg, std::istream& is, const std::string& origin);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Parses "key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Resolved settings in config-file syntax, in a fixed key order.
std::string describe(const RunConfig& cfg);

}  // namespace safebev
