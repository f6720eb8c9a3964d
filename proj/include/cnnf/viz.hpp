#pragma once

#include <string>
#include <vector>

#include "cnnf/nn.hpp"
#include "cnnf/train.hpp"

namespace cnnf {

struct MetricsSeries {
    std::string label;
    std::vector<MetricsRecord> records;
};

// Parses a metrics.csv produced by the trainer. Malformed contents raise
// FormatError naming the 1-based line number; a file with only the header
// raises "no data rows".
MetricsSeries read_metrics_csv(const std::string& path);

// Two-panel chart (train loss and test accuracy versus epoch), one series
// per input, legend from the series labels. Pure function of its inputs:
// identical series always produce identical bytes.
std::string render_comparison_svg(const std::vector<MetricsSeries>& series);

// Runs one image through the model in eval mode and writes one grayscale
// grid (binary PGM) per convolutional ReLU output: channels tiled into a
// near-square layout, each tile min-max normalized (constant tiles render
// mid-gray). Returns the written paths in layer order.
std::vector<std::string> dump_activation_grids(Model& model, const Tensor& image,
                                               const std::string& out_dir);

}  // namespace cnnf
