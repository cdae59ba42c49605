#include "mpcflow/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "mpcflow/binary_io.hpp"
#include "mpcflow/errors.hpp"

namespace mpcflow {

namespace {

using Kind = FormatError::Kind;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Kind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::Io, "cannot open " + path.string());
  return in;
}

void check_image(const Image& image) {
  if (image.pixels.size() != image.height * image.width) {
    throw ShapeError("image: " + std::to_string(image.pixels.size()) + " pixels for " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
}

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw FormatError(Kind::MalformedHeader, path + ": incomplete PGM header");
  return tok;
}

std::size_t header_number(std::istream& in, const std::string& path, const char* what) {
  const std::string tok = header_token(in, path);
  if (!std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
    throw FormatError(Kind::MalformedHeader, path + ": PGM " + what + " '" + tok + "' is not a number");
  }
  return std::stoul(tok);
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& image) {
  check_image(image);
  auto out = open_out(path);
  out << "P5\n" << image.width << " " << image.height << "\n65535\n";
  for (double v : image.pixels) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    const unsigned char b[2] = {static_cast<unsigned char>(q >> 8), static_cast<unsigned char>(q & 0xFFu)};
    out.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!out) throw FormatError(Kind::Io, "write failed: " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string name = path.string();
  char magic[2] = {0, 0};
  if (!in.read(magic, 2)) throw FormatError(Kind::Truncated, name + ": file too short for a PGM header");
  if (magic[0] != 'P') throw FormatError(Kind::BadMagic, name + ": not a PNM file");
  if (magic[1] != '5') {
    throw FormatError(Kind::UnsupportedFormat,
                      name + ": unsupported format P" + std::string(1, magic[1]) + " (only binary P5 is read)");
  }
  Image image;
  image.width = header_number(in, name, "width");
  image.height = header_number(in, name, "height");
  const std::size_t maxval = header_number(in, name, "maxval");
  if (image.width == 0 || image.height == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError(Kind::MalformedHeader, name + ": invalid PGM dimensions or maxval");
  }
  // header_number consumed exactly one whitespace byte after maxval.
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  const std::size_t count = image.width * image.height;
  std::vector<unsigned char> raw(count * bytes_per_sample);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError(Kind::Truncated, name + ": PGM payload shorter than " + std::to_string(raw.size()) + " bytes");
  }
  image.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bytes_per_sample == 2 ? (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1] : raw[i];
    image.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return image;
}

namespace {
constexpr char kGridMagic[8] = {'F', '6', '4', 'G', 'R', 'I', 'D', '0'};
}

void write_raw_grid(const std::filesystem::path& path, const Image& image) {
  check_image(image);
  auto out = open_out(path);
  out.write(kGridMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(image.height));
  detail::put_u32(out, static_cast<std::uint32_t>(image.width));
  for (double v : image.pixels) detail::put_f64(out, v);
  if (!out) throw FormatError(Kind::Io, "write failed: " + path.string());
}

Image read_raw_grid(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string name = path.string();
  char magic[8];
  if (!in.read(magic, 8)) throw FormatError(Kind::Truncated, name + ": file too short for a grid header");
  if (std::memcmp(magic, kGridMagic, 8) != 0) throw FormatError(Kind::BadMagic, name + ": bad magic");
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  if (!detail::get_u32(in, h) || !detail::get_u32(in, w)) {
    throw FormatError(Kind::Truncated, name + ": truncated grid header");
  }
  Image image{h, w, std::vector<double>(std::size_t{h} * w)};
  for (double& v : image.pixels) {
    if (!detail::get_f64(in, v)) throw FormatError(Kind::Truncated, name + ": grid payload is truncated");
  }
  return image;
}

}  // namespace mpcflow
