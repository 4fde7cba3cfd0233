#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lfr::plots {

struct Series {
  std::string name;
  std::vector<double> values;
};

// Line chart of y against x = 1..n, one line per series, y in [0, 1].
void write_cmc_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series);

// Grouped bar chart; each series holds one value per category.
void write_histogram_svg(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& categories, const std::vector<Series>& series);

}  // namespace lfr::plots
