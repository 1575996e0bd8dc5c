#include "attflow/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "attflow/errors.hpp"

namespace attflow {

namespace {

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

void write_pnm(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
               const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& gray, std::size_t channel) {
  if (channel >= gray.channels) throw ParameterError("write_pgm: channel out of range");
  std::vector<unsigned char> bytes(gray.height * gray.width);
  const auto p = gray.plane(channel);
  std::transform(p.begin(), p.end(), bytes.begin(), to_byte);
  write_pnm(path, "P5", gray.width, gray.height, bytes);
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) {
  if (rgb.channels != 3) throw ParameterError("write_ppm: expected 3 channels");
  std::vector<unsigned char> bytes(rgb.height * rgb.width * 3);
  for (std::size_t y = 0; y < rgb.height; ++y)
    for (std::size_t x = 0; x < rgb.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * rgb.width + x) * 3 + c] = to_byte(rgb.at(c, y, x));
  write_pnm(path, "P6", rgb.width, rgb.height, bytes);
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) v = v * 10 + (buf[pos++] - '0');
    if (pos == start) throw FormatError("pnm: expected integer in " + path.string(), start);
    return v;
  };
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    throw FormatError("pnm: unsupported magic in " + path.string(), 0);
  }
  const std::size_t channels = buf[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = read_uint(), h = read_uint(), maxval = read_uint();
  if (maxval != 255) throw FormatError("pnm: only maxval 255 is supported", pos);
  if (pos >= buf.size() || !std::isspace(buf[pos])) throw FormatError("pnm: malformed header", pos);
  ++pos;
  if (buf.size() - pos < w * h * channels) throw FormatError("pnm: truncated pixel data", buf.size());
  Image img(channels, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) = buf[pos + (y * w + x) * channels + c] / 255.0;
  return img;
}

void quantize_8bit(Image& img) {
  for (auto& v : img.pixels) v = to_byte(v) / 255.0;
}

}  // namespace attflow
