#include "lfr/plots.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lfr/errors.hpp"

namespace lfr::plots {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kLeft = 60;
constexpr int kRight = 150;
constexpr int kTop = 40;
constexpr int kBottom = 50;
constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Frame {
  double x0 = kLeft;
  double x1 = kWidth - kRight;
  double y0 = kHeight - kBottom;
  double y1 = kTop;
};

void header(std::ostringstream& svg, const std::string& title) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
}

void y_axis(std::ostringstream& svg, const Frame& f, double y_max, const std::string& label) {
  svg << "<line x1=\"" << f.x0 << "\" y1=\"" << f.y0 << "\" x2=\"" << f.x1 << "\" y2=\"" << f.y0
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << f.x0 << "\" y1=\"" << f.y0 << "\" x2=\"" << f.x0 << "\" y2=\"" << f.y1
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = y_max * i / 5.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    svg << "<line x1=\"" << f.x0 - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << f.x1 << "\" y2=\"" << num(y)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << f.x0 - 8 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  svg << "<text x=\"16\" y=\"" << (f.y0 + f.y1) / 2 << "\" transform=\"rotate(-90 16 " << (f.y0 + f.y1) / 2
      << ")\" text-anchor=\"middle\">" << escape(label) << "</text>\n";
}

void legend(std::ostringstream& svg, const Frame& f, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = f.y1 + 10 + 20.0 * static_cast<double>(i);
    svg << "<rect x=\"" << f.x1 + 15 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
        << kColours[i % 6] << "\"/>\n";
    svg << "<text x=\"" << f.x1 + 32 << "\" y=\"" << y + 1 << "\">" << escape(series[i].name) << "</text>\n";
  }
}

void save(const std::filesystem::path& path, const std::ostringstream& svg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << svg.str() << "</svg>\n";
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_cmc_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series) {
  std::ostringstream svg;
  header(svg, title);
  const Frame f;
  y_axis(svg, f, 1.0, "identification rate");
  std::size_t n = 1;
  for (const auto& s : series) n = std::max(n, s.values.size());
  auto x_of = [&](std::size_t k) { return n <= 1 ? f.x0 : f.x0 + (f.x1 - f.x0) * (k - 1.0) / (n - 1.0); };
  const std::size_t tick = std::max<std::size_t>(1, n / 8);
  for (std::size_t k = 1; k <= n; k += tick) {
    svg << "<text x=\"" << num(x_of(k)) << "\" y=\"" << f.y0 + 18 << "\" text-anchor=\"middle\">" << k << "</text>\n";
  }
  svg << "<text x=\"" << (f.x0 + f.x1) / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">rank</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    svg << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kColours[i % 6] << "\" points=\"";
    for (std::size_t k = 1; k <= series[i].values.size(); ++k) {
      const double v = std::clamp(series[i].values[k - 1], 0.0, 1.0);
      svg << num(x_of(k)) << ',' << num(f.y0 + (f.y1 - f.y0) * v) << ' ';
    }
    svg << "\"/>\n";
  }
  legend(svg, f, series);
  save(path, svg);
}

void write_histogram_svg(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& categories, const std::vector<Series>& series) {
  std::ostringstream svg;
  header(svg, title);
  const Frame f;
  double y_max = 0.0;
  for (const auto& s : series) {
    for (double v : s.values) y_max = std::max(y_max, v);
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_axis(svg, f, y_max, "count");
  const double group = (f.x1 - f.x0) / static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const double bar = group * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = f.x0 + group * static_cast<double>(c);
    svg << "<text x=\"" << num(gx + group / 2) << "\" y=\"" << f.y0 + 18 << "\" text-anchor=\"middle\">"
        << escape(categories[c]) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double v = c < series[i].values.size() ? series[i].values[c] : 0.0;
      const double h = (f.y0 - f.y1) * v / y_max;
      svg << "<rect x=\"" << num(gx + group * 0.1 + bar * static_cast<double>(i)) << "\" y=\"" << num(f.y0 - h)
          << "\" width=\"" << num(bar) << "\" height=\"" << num(h) << "\" fill=\"" << kColours[i % 6] << "\"/>\n";
    }
  }
  legend(svg, f, series);
  save(path, svg);
}

}  // namespace lfr::plots
