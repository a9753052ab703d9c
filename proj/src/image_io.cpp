#include "goodpoint/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

namespace goodpoint {

namespace {

// Next whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(c));
  }
  return tok;
}

int next_int(std::istream& in, const std::string& what) {
  const std::string tok = next_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    raise_runtime("malformed PNM header: bad " + what);
  }
}

float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise_runtime("cannot open image: " + path);
  const std::string magic = next_token(in);
  if (magic != "P2" && magic != "P5" && magic != "P3" && magic != "P6")
    raise_runtime("unsupported image format (need PGM/PPM): " + path);
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  const int width = next_int(in, "width");
  const int height = next_int(in, "height");
  const int maxval = next_int(in, "maxval");
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    raise_runtime("malformed PNM header: " + path);

  const int channels = color ? 3 : 1;
  const std::size_t count = std::size_t(width) * height * channels;
  std::vector<float> raw(count);
  if (binary) {
    if (maxval < 256) {
      std::vector<std::uint8_t> buf(count);
      in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count));
      if (!in) raise_runtime("truncated image data: " + path);
      for (std::size_t i = 0; i < count; ++i) raw[i] = float(buf[i]) / float(maxval);
    } else {
      std::vector<std::uint8_t> buf(count * 2);
      in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count * 2));
      if (!in) raise_runtime("truncated image data: " + path);
      for (std::size_t i = 0; i < count; ++i) {
        const int v = (int(buf[2 * i]) << 8) | int(buf[2 * i + 1]);
        raw[i] = float(v) / float(maxval);
      }
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = float(next_int(in, "pixel")) / float(maxval);
  }

  Image img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = color ? luminance(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]) : raw[i];
    img.v[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return img;
}

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise_runtime("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    buf[i] = std::uint8_t(std::lround(std::clamp(img.v[i], 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) raise_runtime("failed writing image: " + path);
}

void write_ppm(const std::string& path, const Image& r, const Image& g, const Image& b) {
  if (r.height != g.height || r.height != b.height || r.width != g.width || r.width != b.width)
    raise_runtime("write_ppm: channel shape mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) raise_runtime("cannot write image: " + path);
  out << "P6\n" << r.width << " " << r.height << "\n255\n";
  std::vector<std::uint8_t> buf(r.size() * 3);
  for (std::size_t i = 0; i < r.size(); ++i) {
    buf[3 * i] = std::uint8_t(std::lround(std::clamp(r.v[i], 0.0f, 1.0f) * 255.0f));
    buf[3 * i + 1] = std::uint8_t(std::lround(std::clamp(g.v[i], 0.0f, 1.0f) * 255.0f));
    buf[3 * i + 2] = std::uint8_t(std::lround(std::clamp(b.v[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) raise_runtime("failed writing image: " + path);
}

bool has_image_extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return false;
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == "pgm" || ext == "ppm" || ext == "pnm";
}

std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) raise_usage("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path().string()))
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace goodpoint
