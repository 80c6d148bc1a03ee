#pragma once

// Annotation files: one line per image,
//   <image path> [x1 y1 x2 y2 height visibility ignore]...
// Paths are relative to the annotation file's directory unless absolute.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/annotations.hpp"
#include "gmlf/image.hpp"

namespace gmlf {

struct Sample {
  std::string path;  // as written in the annotation file
  Image image;
  std::vector<GroundTruthBox> boxes;
};

using Dataset = std::vector<Sample>;

inline GroundTruthBox flip_box(const GroundTruthBox& g, double width) {
  GroundTruthBox f = g;
  f.box = {width - g.box.x2, g.box.y1, width - g.box.x1, g.box.y2};
  return f;
}

inline std::string format_annotation_line(const Sample& s) {
  std::ostringstream line;
  line << s.path << std::setprecision(17);
  for (const auto& g : s.boxes) {
    line << ' ' << g.box.x1 << ' ' << g.box.y1 << ' ' << g.box.x2 << ' ' << g.box.y2 << ' ' << g.height << ' '
         << g.visibility << ' ' << (g.ignore ? 1 : 0);
  }
  return line.str();
}

/// Parses one annotation line; the image is not loaded.
inline Sample parse_annotation_line(const std::string& line, int line_no = 0) {
  std::istringstream in(line);
  Sample s;
  if (!(in >> s.path)) throw std::runtime_error("annotation line " + std::to_string(line_no) + ": missing image path");
  std::vector<double> fields;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      fields.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw std::runtime_error("annotation line " + std::to_string(line_no) + ": '" + tok + "' is not a number");
    }
  }
  if (fields.size() % 7 != 0) {
    throw std::runtime_error("annotation line " + std::to_string(line_no) +
                             ": box records need 7 fields (x1 y1 x2 y2 height visibility ignore)");
  }
  for (std::size_t i = 0; i < fields.size(); i += 7) {
    GroundTruthBox g{{fields[i], fields[i + 1], fields[i + 2], fields[i + 3]}, fields[i + 4], fields[i + 5],
                     fields[i + 6] != 0};
    try {
      g.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error("annotation line " + std::to_string(line_no) + ": " + e.what());
    }
    s.boxes.push_back(g);
  }
  return s;
}

/// Writes images next to the annotation file and the annotation file itself.
inline void save_dataset(const Dataset& data, const std::filesystem::path& annotation_file) {
  const auto dir = annotation_file.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(annotation_file);
  if (!out) throw std::runtime_error("cannot open '" + annotation_file.string() + "' for writing");
  for (const auto& s : data) {
    const auto img_path = std::filesystem::path(s.path).is_absolute() ? std::filesystem::path(s.path) : dir / s.path;
    if (img_path.has_parent_path()) std::filesystem::create_directories(img_path.parent_path());
    write_pnm(img_path.string(), s.image);
    out << format_annotation_line(s) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + annotation_file.string() + "'");
}

inline Dataset load_dataset(const std::filesystem::path& annotation_file) {
  std::ifstream in(annotation_file);
  if (!in) throw std::runtime_error("cannot open annotation file '" + annotation_file.string() + "'");
  Dataset data;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    Sample s = parse_annotation_line(line, line_no);
    const std::filesystem::path p(s.path);
    s.image = read_pnm((p.is_absolute() ? p : annotation_file.parent_path() / p).string());
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace gmlf
