#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dettoy {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major, width * height

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Writes an 8-bit grayscale PNG. Output bytes depend only on the pixel data.
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Reads an 8-bit grayscale PNG (other color types are converted to gray).
GrayImage read_png(const std::filesystem::path& path);

}  // namespace dettoy
