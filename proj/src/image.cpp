#include "stereopose/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "stereopose/errors.hpp"

namespace stereopose {

float bilinear_sample(const ImageBuffer& img, int c, double x, double y) {
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double ax = x - x0;
  double ay = y - y0;
  auto tap = [&](int yy, int xx) -> double {
    if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height) return 0.0;
    return img.at(c, yy, xx);
  };
  double top = (1.0 - ax) * tap(y0, x0) + ax * tap(y0, x0 + 1);
  double bot = (1.0 - ax) * tap(y0 + 1, x0) + ax * tap(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - ay) * top + ay * bot);
}

std::uint8_t float_to_byte(float v) {
  float scaled = v * 255.0f;
  if (!(scaled > 0.0f)) return 0;
  if (scaled >= 255.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(scaled));
}

float byte_to_float(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

void quantize_to_8bit(ImageBuffer& img) {
  for (float& v : img.data) v = byte_to_float(float_to_byte(v));
}

void write_ppm(const ImageBuffer& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ppm: cannot write '" + path + "'");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = float_to_byte(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw DataError("ppm: write failed for '" + path + "'");
}

namespace {

int read_ppm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments between header tokens
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw DataError("ppm: malformed header in '" + path + "'");
  long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 30) throw DataError("ppm: header value overflow in '" + path + "'");
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

ImageBuffer read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open '" + path + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') throw DataError("ppm: bad magic in '" + path + "'");
  int w = read_ppm_token(in, path);
  int h = read_ppm_token(in, path);
  int maxval = read_ppm_token(in, path);
  if (w < 1 || h < 1) throw DataError("ppm: bad dimensions in '" + path + "'");
  if (maxval != 255) throw DataError("ppm: only maxval 255 supported in '" + path + "'");
  int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) throw DataError("ppm: bad header end in '" + path + "'");

  ImageBuffer img(h, w);
  std::vector<std::uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    if (in.gcount() != static_cast<std::streamsize>(row.size()))
      throw DataError("ppm: truncated pixel data in '" + path + "'");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = byte_to_float(row[static_cast<size_t>(x) * 3 + c]);
  }
  return img;
}

}  // namespace stereopose
