#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stereopose {

// Planar CHW image, 3 channels, intensities in [0, 1]. Pixel centers sit at
// integer coordinates; (x, y) = (column, row).
struct ImageBuffer {
  int height = 0;
  int width = 0;
  static constexpr int channels = 3;
  std::vector<float> data;  // size = 3 * height * width, planar

  ImageBuffer() = default;
  ImageBuffer(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<size_t>(3) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  bool operator==(const ImageBuffer&) const = default;
};

// Bilinear sample of one channel at real coordinates (x, y); source pixels
// outside the image read as 0.
float bilinear_sample(const ImageBuffer& img, int c, double x, double y);

// Binary PPM (P6, maxval 255). Stored intensities are quantized to 8 bits, so
// write(read(p)) reproduces the file byte for byte and read(write(img)) is
// exact whenever img holds 8-bit-quantized values (k / 255).
void write_ppm(const ImageBuffer& img, const std::string& path);
ImageBuffer read_ppm(const std::string& path);

// Round every intensity to the nearest 8-bit level.
void quantize_to_8bit(ImageBuffer& img);

std::uint8_t float_to_byte(float v);
float byte_to_float(std::uint8_t b);

}  // namespace stereopose
