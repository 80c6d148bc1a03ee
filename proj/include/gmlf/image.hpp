#pragma once

// 8-bit images, binary PGM/PPM I/O, and conversion to network input.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/autodiff/tensor.hpp"

namespace gmlf {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (gray) or 3 (RGB, interleaved)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 1 || h < 1 || (c != 1 && c != 3)) throw std::invalid_argument("image: bad size or channel count");
  }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      tok.push_back(ch);
      break;
    }
  }
  while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  return tok;
}

}  // namespace detail

/// P5 for gray images, P6 for RGB.
inline void write_pnm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path + "'");
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P5" && magic != "P6") throw std::runtime_error("'" + path + "' is not a binary PGM/PPM file");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::next_pnm_token(in));
    h = std::stoi(detail::next_pnm_token(in));
    maxval = std::stoi(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("'" + path + "' has a malformed header");
  }
  if (maxval != 255) throw std::runtime_error("'" + path + "': only 8-bit images are supported");
  Image img(w, h, magic == "P5" ? 1 : 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error("'" + path + "' is truncated");
  }
  return img;
}

/// (3, H, W) tensor, gray replicated to three channels, scaled to about [-2, 2].
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<T> v(3 * plane);
  for (int c = 0; c < 3; ++c) {
    const int src = img.channels == 1 ? 0 : c;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        v[c * plane + static_cast<std::size_t>(y) * img.width + x] =
            static_cast<T>((static_cast<double>(img.at(x, y, src)) - 127.5) / 64.0);
      }
    }
  }
  return Tensor<T>({3, img.height, img.width}, std::move(v));
}

inline Image flip_horizontal(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  return out;
}

}  // namespace gmlf
