#pragma once

#include <string>
#include <vector>

#include "vpl/common.hpp"

namespace vpl::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Minimal deterministic line plot: white background, gray frame and grid,
// one fixed palette color per series, legend swatches in the top-left.
void line_plot(const std::string& path, const std::vector<Series>& series,
               int width = 640, int height = 400);

struct BarGroup {
  std::string name;
  std::vector<double> values;  // one per label
};

// Grouped bar chart; every group must have one value per label.
void bar_chart(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<BarGroup>& groups, int width = 640,
               int height = 400);

}  // namespace vpl::plot
