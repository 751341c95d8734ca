#include "safebev/pipeline.hpp"

namespace safebev {

std::vector<OrientedBox> PipelineResult::final_boxes() const {
    std::vector<OrientedBox> out = merged_critical;
    out.insert(out.end(), kept_noncritical.begin(), kept_noncritical.end());
    return out;
}

namespace {

void collect(const PredictionGrid& g, const GridSpec& grid, double threshold, const SizeCaps& caps,
             std::vector<OrientedBox>& boxes, std::vector<CellOutput>* outputs, std::vector<std::string>& warnings) {
    for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            if (!g.owned[i * g.cols + j]) continue;
            const CellOutput& o = g.at(i, j);
            if (!(o.pr >= threshold)) continue;
            const OrientedBox b = decode_cell(grid, {i, j}, o);
            if (auto w = size_cap_warning(b, caps)) {
                warnings.push_back("cell <" + std::to_string(i) + "," + std::to_string(j) + ">: " + *w);
            }
            boxes.push_back(b);
            if (outputs != nullptr) outputs->push_back(o);
        }
    }
}

}  // namespace

PipelineResult run_pipeline(const DetectorOutput& out, const GridSpec& grid, const SafetySpec& spec,
                            const PipelineOptions& opts) {
    PipelineResult r;
    std::vector<CellOutput> crit_outputs;
    collect(out.critical, grid, opts.critical.class_threshold, opts.caps, r.raw_critical, &crit_outputs, r.warnings);
    collect(out.noncritical, grid, opts.noncritical.class_threshold, opts.caps, r.raw_noncritical, nullptr,
            r.warnings);
    BufferOptions bopts;
    bopts.cross_check = false;
    for (std::size_t k = 0; k < r.raw_critical.size(); ++k) {
        r.enlarged_critical.push_back(enlarge_box(r.raw_critical[k], buffer_bounds(crit_outputs[k], spec, bopts)));
    }
    r.merged_critical = postprocess(r.enlarged_critical, opts.critical);
    r.kept_noncritical = postprocess(r.raw_noncritical, opts.noncritical);
    return r;
}

}  // namespace safebev
