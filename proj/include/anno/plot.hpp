#pragma once

// Minimal SVG line charts for learning curves.

#include <string>
#include <vector>

namespace anno {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 720;
    int height = 440;
};

// Axes span the data range; y starts at 0 when all values are non-negative.
std::string line_chart_svg(const std::vector<Series>& series, const PlotSpec& spec);

}  // namespace anno
