#pragma once

// Writes gate coefficients for inspection: spatial gates as p x p PGM images
// (0 -> black, 1 -> white), channel gates as one-value-per-line CSV.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/detector/detector.hpp"
#include "gmlf/image.hpp"

namespace gmlf {

struct GateExportFile {
  int roi = 0;
  int block = 0;
  std::string kind;
  std::filesystem::path path;
  std::size_t values = 0;
};

inline std::uint8_t gate_to_gray(double g) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255.0));
}

inline std::string gate_csv(std::span<const double> values) {
  std::ostringstream out;
  out << "channel,gate\n" << std::fixed << std::setprecision(8);
  for (std::size_t i = 0; i < values.size(); ++i) out << i << ',' << values[i] << '\n';
  return out.str();
}

inline std::vector<double> parse_gate_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "channel,gate") throw std::runtime_error("gate CSV: missing 'channel,gate' header");
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("gate CSV: malformed line '" + line + "'");
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

/// One file per (RoI, used block) plus index.csv. Returns what was written.
template <typename T>
std::vector<GateExportFile> export_gate_maps(const Detector<T>& model, const Tensor<T>& image,
                                             const std::vector<RoiBox>& rois, const std::filesystem::path& dir) {
  if (!model.extractor()) throw std::invalid_argument("export-gates: the baseline model has no gates");
  std::filesystem::create_directories(dir);
  NoGradGuard guard;
  const auto sources = model.roi_sources(image);
  const auto& blocks = model.extractor()->config().blocks_used;
  std::vector<GateExportFile> files;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto ext = model.roi_feature(sources, rois[i]);
    for (std::size_t b = 0; b < ext.gates.size(); ++b) {
      const Tensor<T>& g = ext.gates[b];
      GateExportFile f;
      f.roi = static_cast<int>(i);
      f.block = blocks[b];
      f.values = g.numel();
      const std::string stem = "roi" + std::to_string(i) + "_block" + std::to_string(blocks[b]);
      if (model.config().gate_kind == GateKind::spatial) {
        f.kind = "spatial";
        f.path = dir / (stem + "_spatial.pgm");
        Image img(g.dim(2), g.dim(1), 1);
        for (std::size_t k = 0; k < g.numel(); ++k) img.pixels[k] = gate_to_gray(static_cast<double>(g[k]));
        write_pnm(f.path.string(), img);
      } else {
        f.kind = "channel";
        f.path = dir / (stem + "_channel.csv");
        std::vector<double> v(g.values().begin(), g.values().end());
        std::ofstream out(f.path);
        if (!out) throw std::runtime_error("cannot open '" + f.path.string() + "' for writing");
        out << gate_csv(v);
        if (!out) throw std::runtime_error("failed writing '" + f.path.string() + "'");
      }
      files.push_back(f);
    }
  }
  const auto index_path = dir / "index.csv";
  std::ofstream index(index_path);
  if (!index) throw std::runtime_error("cannot open '" + index_path.string() + "' for writing");
  index << "roi,x1,y1,x2,y2,block,kind,values,file\n";
  for (const auto& f : files) {
    const auto& r = rois[static_cast<std::size_t>(f.roi)];
    index << f.roi << ',' << r.x1 << ',' << r.y1 << ',' << r.x2 << ',' << r.y2 << ',' << f.block << ',' << f.kind
          << ',' << f.values << ',' << f.path.filename().string() << '\n';
  }
  return files;
}

}  // namespace gmlf
