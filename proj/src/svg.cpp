#include "vmoe/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "vmoe/diversity.hpp"
#include "vmoe/errors.hpp"

namespace vmoe {

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open SVG file for writing: " + path);
    out << content;
    if (!out)
        throw IoError("failed writing SVG file: " + path);
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

} // namespace

void heatmap_export(const SimilarityRecord& record, const std::string& path) {
    const Eigen::Index n = record.matrix.rows();
    if (n < 2 || record.matrix.cols() != n)
        throw MetricError("heatmap_export: need a square matrix, n >= 2");

    const int cell = 48;
    const int margin = 34;
    const int width = margin + cell * static_cast<int>(n) + 8;
    const int height = margin + cell * static_cast<int>(n) + 8;
    const bool annotate = n <= 8;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(width) + "\" height=\"" + std::to_string(height) +
           "\" font-family=\"monospace\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::string label = "e" + std::to_string(i);
        svg += "<text x=\"" +
               std::to_string(margin + cell * static_cast<int>(i) + cell / 2) +
               "\" y=\"" + std::to_string(margin - 10) +
               "\" font-size=\"12\" text-anchor=\"middle\">" + label +
               "</text>\n";
        svg += "<text x=\"" + std::to_string(margin - 8) + "\" y=\"" +
               std::to_string(margin + cell * static_cast<int>(i) + cell / 2 + 4) +
               "\" font-size=\"12\" text-anchor=\"end\">" + label + "</text>\n";
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double s = record.matrix(i, j);
            // Linear ramp on [-1, 1]: similarity 1 renders black, -1 white.
            const int v = static_cast<int>(
                std::lround(255.0 * (1.0 - (s + 1.0) / 2.0)));
            const int x = margin + cell * static_cast<int>(j);
            const int y = margin + cell * static_cast<int>(i);
            svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" +
                   std::to_string(y) + "\" width=\"" + std::to_string(cell) +
                   "\" height=\"" + std::to_string(cell) + "\" fill=\"rgb(" +
                   std::to_string(v) + "," + std::to_string(v) + "," +
                   std::to_string(v) + ")\"/>\n";
            if (annotate) {
                const char* text_fill = v < 128 ? "white" : "black";
                svg += "<text x=\"" + std::to_string(x + cell / 2) +
                       "\" y=\"" + std::to_string(y + cell / 2 + 4) +
                       "\" font-size=\"12\" text-anchor=\"middle\" fill=\"" +
                       text_fill + "\">" + fixed(s, 2) + "</text>\n";
            }
        }
    }
    svg += "</svg>\n";
    write_file(path, svg);
}

void line_plot_export(const std::vector<LineSeries>& series,
                      const std::string& y_label, const std::string& path) {
    if (series.empty())
        throw MetricError("line_plot_export: no series");

    std::size_t steps = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const LineSeries& s : series) {
        steps = std::max(steps, s.values.size());
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (steps == 0)
        throw MetricError("line_plot_export: all series are empty");
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = (hi - lo) * 0.05;
    lo -= pad;
    hi += pad;

    const int width = 640;
    const int height = 360;
    const int ml = 56, mr = 16, mt = 20, mb = 40;
    const double plot_w = width - ml - mr;
    const double plot_h = height - mt - mb;
    const double x_span = steps > 1 ? static_cast<double>(steps - 1) : 1.0;

    const auto sx = [&](std::size_t i) {
        return ml + plot_w * static_cast<double>(i) / x_span;
    };
    const auto sy = [&](double v) {
        return mt + plot_h * (1.0 - (v - lo) / (hi - lo));
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(width) + "\" height=\"" + std::to_string(height) +
           "\" font-family=\"monospace\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        const double y = sy(v);
        svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + fixed(y, 1) +
               "\" x2=\"" + std::to_string(width - mr) + "\" y2=\"" +
               fixed(y, 1) + "\" stroke=\"#dddddd\"/>\n";
        svg += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" +
               fixed(y + 4, 1) + "\" text-anchor=\"end\">" + fixed(v, 3) +
               "</text>\n";
    }
    const std::size_t x_stride = std::max<std::size_t>(1, steps / 8);
    for (std::size_t i = 0; i < steps; i += x_stride) {
        svg += "<text x=\"" + fixed(sx(i), 1) + "\" y=\"" +
               std::to_string(height - mb + 18) +
               "\" text-anchor=\"middle\">" + std::to_string(i) + "</text>\n";
    }
    svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" +
           std::to_string(height - 8) + "\" text-anchor=\"middle\">step</text>\n";
    svg += "<text x=\"14\" y=\"" + std::to_string(height / 2) +
           "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
           std::to_string(height / 2) + ")\">" + y_label + "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(*kPalette))];
        if (!series[s].values.empty()) {
            std::string points;
            for (std::size_t i = 0; i < series[s].values.size(); ++i) {
                if (i)
                    points += ' ';
                points += fixed(sx(i), 1) + "," + fixed(sy(series[s].values[i]), 1);
            }
            svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                   "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        }
        const int ly = mt + 14 * static_cast<int>(s);
        svg += "<rect x=\"" + std::to_string(width - mr - 150) + "\" y=\"" +
               std::to_string(ly) + "\" width=\"10\" height=\"10\" fill=\"" +
               color + "\"/>\n";
        svg += "<text x=\"" + std::to_string(width - mr - 136) + "\" y=\"" +
               std::to_string(ly + 9) + "\">" + series[s].label + "</text>\n";
    }
    svg += "</svg>\n";
    write_file(path, svg);
}

} // namespace vmoe
