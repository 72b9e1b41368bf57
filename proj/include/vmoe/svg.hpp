#pragma once

#include <string>
#include <vector>

// Standalone SVG rendering for experiment outputs. All numeric formatting is
// fixed-precision, so identical inputs produce byte-identical files.
namespace vmoe {

struct LineSeries {
    std::string label;
    std::vector<double> values;
};

// Renders one polyline per series over a shared step axis and writes the SVG
// to `path`. Throws IoError when the file cannot be written.
void line_plot_export(const std::vector<LineSeries>& series,
                      const std::string& y_label, const std::string& path);

} // namespace vmoe
