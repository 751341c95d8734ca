#pragma once

#include <string>
#include <vector>

#include "safebev/certify.hpp"
#include "safebev/geometry.hpp"
#include "safebev/network.hpp"
#include "safebev/postprocess.hpp"
#include "safebev/safety_spec.hpp"

namespace safebev {

struct PipelineOptions {
    /// Applied to the enlarged critical-area boxes.
    PostConfig critical{0.5, 0.1, PostMode::nmi};
    /// Applied to the non-critical boxes.
    PostConfig noncritical{0.5, 0.5, PostMode::nms};
    SizeCaps caps;
};

/// Boxes at every stage of post-processing for one input.
struct PipelineResult {
    std::vector<OrientedBox> raw_critical;
    std::vector<OrientedBox> enlarged_critical;
    std::vector<OrientedBox> merged_critical;
    std::vector<OrientedBox> raw_noncritical;
    std::vector<OrientedBox> kept_noncritical;
    std::vector<std::string> warnings;

    /// merged_critical followed by kept_noncritical.
    [[nodiscard]] std::vector<OrientedBox> final_boxes() const;
};

/// Decodes owned cells at or above the class threshold, enlarges critical boxes
/// by their buffer bounds, then runs the configured post-processing per area.
/// Decoded boxes beyond the size caps add a warning.
PipelineResult run_pipeline(const DetectorOutput& out, const GridSpec& grid, const SafetySpec& spec,
                            const PipelineOptions& opts);

}  // namespace safebev
