#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/safety_spec.hpp"

namespace safebev {

enum class BoxRole { ground_truth, raw, enlarged, merged, noncritical };

const char* role_color(BoxRole r);

struct RenderLayer {
    BoxRole role = BoxRole::raw;
    std::vector<OrientedBox> boxes;
};

/// Static SVG of the world extent: output grid, shaded critical area and the
/// boxes of each layer, ego at the bottom center, x pointing up.
void render_svg(std::ostream& os, const GridSpec& grid, const SafetySpec& spec, const std::vector<RenderLayer>& layers,
                const std::string& title);

}  // namespace safebev
