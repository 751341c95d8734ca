#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "safebev/geometry.hpp"

namespace safebev {

enum class PostMode { nms, nmi, nmi_iterative };

const char* to_string(PostMode m);
PostMode post_mode_from_string(const std::string& s);

/// IoU above which two boxes count as the same object: 0.5 for nms, 0.1 for
/// both inclusion modes.
double default_iou_threshold(PostMode m);

struct PostConfig {
    double class_threshold = 0.5;
    double iou_threshold = 0.1;
    PostMode mode = PostMode::nmi;

    void validate() const;
};

/// Boxes with probability >= threshold, sorted by probability (high first),
/// ties broken by cx, cy, heading ascending.
std::vector<OrientedBox> ranked_candidates(std::span<const OrientedBox> boxes, double class_threshold);

/// Greedy non-max-suppression.
std::vector<OrientedBox> nms(std::span<const OrientedBox> boxes, const PostConfig& cfg);

/// Non-max-inclusion: each anchor absorbs every remaining candidate with
/// IoU above the threshold and is replaced by the anchor-aligned box enclosing
/// the whole cluster. Absorbed boxes are not reconsidered.
std::vector<OrientedBox> nmi(std::span<const OrientedBox> boxes, const PostConfig& cfg);

/// Iteration cap of the geometric growth in nmi_iterative.
inline constexpr std::size_t kMaxGrowthSteps = 10000;

/// Same clustering as nmi, but the merged box is the anchor scaled by 1.05^i in
/// length and 1.1^i in width for the smallest i >= 0 that contains the cluster.
std::vector<OrientedBox> nmi_iterative(std::span<const OrientedBox> boxes, const PostConfig& cfg);

/// Dispatches on cfg.mode.
std::vector<OrientedBox> postprocess(std::span<const OrientedBox> boxes, const PostConfig& cfg);

}  // namespace safebev
