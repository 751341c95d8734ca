#include "safebev/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace safebev {

const char* to_string(PostMode m) {
    switch (m) {
    case PostMode::nms: return "nms";
    case PostMode::nmi: return "nmi";
    case PostMode::nmi_iterative: return "nmi-iterative";
    }
    return "?";
}

PostMode post_mode_from_string(const std::string& s) {
    if (s == "nms") return PostMode::nms;
    if (s == "nmi") return PostMode::nmi;
    if (s == "nmi-iterative") return PostMode::nmi_iterative;
    throw std::invalid_argument("unknown post-processing mode '" + s + "' (expected nms, nmi or nmi-iterative)");
}

double default_iou_threshold(PostMode m) { return m == PostMode::nms ? 0.5 : 0.1; }

void PostConfig::validate() const {
    if (!(class_threshold > 0.0 && class_threshold < 1.0)) {
        throw std::invalid_argument("PostConfig: class_threshold must lie in (0,1)");
    }
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
        throw std::invalid_argument("PostConfig: iou_threshold must lie in (0,1)");
    }
}

std::vector<OrientedBox> ranked_candidates(std::span<const OrientedBox> boxes, double class_threshold) {
    std::vector<OrientedBox> out;
    for (const auto& b : boxes) {
        if (b.probability >= class_threshold) out.push_back(b);
    }
    std::stable_sort(out.begin(), out.end(), [](const OrientedBox& a, const OrientedBox& b) {
        return std::make_tuple(-a.probability, a.cx, a.cy, a.heading) <
               std::make_tuple(-b.probability, b.cx, b.cy, b.heading);
    });
    return out;
}

namespace {

// Pops anchors in rank order; `merge` builds the output box from the cluster.
template <typename Merge>
std::vector<OrientedBox> cluster(std::span<const OrientedBox> boxes, const PostConfig& cfg, Merge merge) {
    cfg.validate();
    std::vector<OrientedBox> pool = ranked_candidates(boxes, cfg.class_threshold);
    std::vector<OrientedBox> out;
    std::vector<bool> taken(pool.size(), false);
    for (std::size_t a = 0; a < pool.size(); ++a) {
        if (taken[a]) continue;
        taken[a] = true;
        std::vector<OrientedBox> members{pool[a]};
        for (std::size_t k = a + 1; k < pool.size(); ++k) {
            if (!taken[k] && rotated_iou(pool[a], pool[k]) > cfg.iou_threshold) {
                taken[k] = true;
                members.push_back(pool[k]);
            }
        }
        out.push_back(merge(pool[a], members));
    }
    return out;
}

}  // namespace

std::vector<OrientedBox> nms(std::span<const OrientedBox> boxes, const PostConfig& cfg) {
    return cluster(boxes, cfg, [](const OrientedBox& anchor, const std::vector<OrientedBox>&) { return anchor; });
}

std::vector<OrientedBox> nmi(std::span<const OrientedBox> boxes, const PostConfig& cfg) {
    return cluster(boxes, cfg, [](const OrientedBox& anchor, const std::vector<OrientedBox>& members) {
        // keep the anchor bit for bit when it already covers its cluster
        const bool covered = std::all_of(members.begin(), members.end(),
                                         [&](const OrientedBox& m) { return contains(anchor, m); });
        return covered ? anchor : enclosing_box(anchor, members);
    });
}

std::vector<OrientedBox> nmi_iterative(std::span<const OrientedBox> boxes, const PostConfig& cfg) {
    return cluster(boxes, cfg, [](const OrientedBox& anchor, const std::vector<OrientedBox>& members) {
        for (std::size_t i = 0; i <= kMaxGrowthSteps; ++i) {
            OrientedBox grown = anchor;
            grown.length = anchor.length * std::pow(1.05, static_cast<double>(i));
            grown.width = anchor.width * std::pow(1.1, static_cast<double>(i));
            const bool all = std::all_of(members.begin(), members.end(),
                                         [&](const OrientedBox& m) { return contains(grown, m); });
            if (all) return grown;
        }
        throw std::logic_error("nmi_iterative: cluster not contained after growth cap");
    });
}

std::vector<OrientedBox> postprocess(std::span<const OrientedBox> boxes, const PostConfig& cfg) {
    switch (cfg.mode) {
    case PostMode::nms: return nms(boxes, cfg);
    case PostMode::nmi: return nmi(boxes, cfg);
    case PostMode::nmi_iterative: return nmi_iterative(boxes, cfg);
    }
    throw std::logic_error("postprocess: bad mode");
}

}  // namespace safebev
