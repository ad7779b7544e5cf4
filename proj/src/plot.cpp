#include "vpl/plot.hpp"

#include <algorithm>
#include <cmath>

#include "vpl/image.hpp"

namespace vpl::plot {

namespace {

struct Rgb {
  unsigned char r, g, b;
};

constexpr Rgb kPalette[] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
};
constexpr int kPaletteSize = int(sizeof(kPalette) / sizeof(kPalette[0]));
constexpr int kMargin = 32;

void put(ImageU8& img, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(x, y, 0) = c.r;
  img.at(x, y, 1) = c.g;
  img.at(x, y, 2) = c.b;
}

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1,
               Rgb c) {
  const double steps =
      std::max(2.0, 2 * std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
  for (int i = 0; i <= int(steps); ++i) {
    const double t = i / steps;
    put(img, int(std::lround(x0 + (x1 - x0) * t)),
        int(std::lround(y0 + (y1 - y0) * t)), c);
  }
}

void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(img, x, y, c);
}

void frame_and_grid(ImageU8& img) {
  const Rgb frame{80, 80, 80}, grid{225, 225, 225};
  for (int i = 1; i < 4; ++i) {
    const int gx = kMargin + (img.width - 2 * kMargin) * i / 4;
    const int gy = kMargin + (img.height - 2 * kMargin) * i / 4;
    draw_line(img, gx, kMargin, gx, img.height - kMargin, grid);
    draw_line(img, kMargin, gy, img.width - kMargin, gy, grid);
  }
  draw_line(img, kMargin, kMargin, kMargin, img.height - kMargin, frame);
  draw_line(img, kMargin, img.height - kMargin, img.width - kMargin,
            img.height - kMargin, frame);
  draw_line(img, img.width - kMargin, kMargin, img.width - kMargin,
            img.height - kMargin, frame);
  draw_line(img, kMargin, kMargin, img.width - kMargin, kMargin, frame);
}

void legend(ImageU8& img, int count) {
  for (int i = 0; i < count; ++i)
    fill_rect(img, kMargin + 6, kMargin + 6 + 12 * i, kMargin + 18,
              kMargin + 14 + 12 * i, kPalette[i % kPaletteSize]);
}

}  // namespace

void line_plot(const std::string& path, const std::vector<Series>& series,
               int width, int height) {
  if (series.empty()) throw Error("line_plot: no series");
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw Error("line_plot: series '" + s.name + "' x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (xhi < xlo) throw Error("line_plot: series are empty");
  if (xhi == xlo) xhi = xlo + 1;
  if (yhi == ylo) yhi = ylo + 1;
  const double ypad = 0.05 * (yhi - ylo);
  ylo -= ypad;
  yhi += ypad;

  ImageU8 img(width, height, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), 255);
  frame_and_grid(img);
  auto px = [&](double x) {
    return kMargin + (x - xlo) / (xhi - xlo) * (width - 2 * kMargin);
  };
  auto py = [&](double y) {
    return height - kMargin - (y - ylo) / (yhi - ylo) * (height - 2 * kMargin);
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const Rgb c = kPalette[si % kPaletteSize];
    for (std::size_t i = 1; i < s.x.size(); ++i)
      draw_line(img, px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]),
                c);
  }
  legend(img, int(series.size()));
  write_png(path, img);
}

void bar_chart(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<BarGroup>& groups, int width, int height) {
  if (labels.empty() || groups.empty())
    throw Error("bar_chart: labels and groups must be nonempty");
  for (const auto& g : groups)
    if (g.values.size() != labels.size())
      throw Error("bar_chart: group '" + g.name + "' has " +
                  std::to_string(g.values.size()) + " values, expected " +
                  std::to_string(labels.size()));
  double hi = 0;
  for (const auto& g : groups)
    for (double v : g.values) hi = std::max(hi, v);
  if (hi <= 0) hi = 1;

  ImageU8 img(width, height, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), 255);
  frame_and_grid(img);
  const int plot_w = width - 2 * kMargin;
  const int plot_h = height - 2 * kMargin;
  const int nl = int(labels.size()), ng = int(groups.size());
  const double slot = double(plot_w) / nl;
  const double bar = slot / (ng + 1);
  for (int li = 0; li < nl; ++li)
    for (int gi = 0; gi < ng; ++gi) {
      const double v = groups[std::size_t(gi)].values[std::size_t(li)];
      const int x0 = int(kMargin + li * slot + (gi + 0.5) * bar);
      const int x1 = int(x0 + bar) - 1;
      const int y1 = height - kMargin - 1;
      const int y0 = y1 - int(std::lround(v / hi * (plot_h - 2)));
      fill_rect(img, x0, y0, x1, y1, kPalette[gi % kPaletteSize]);
    }
  legend(img, ng);
  write_png(path, img);
}

}  // namespace vpl::plot
