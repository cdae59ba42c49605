#include "mpcflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mpcflow/binary_io.hpp"
#include "mpcflow/errors.hpp"

namespace mpcflow {

namespace {
constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'C', 'K', 'P', 'T'};
using Kind = FormatError::Kind;
}  // namespace

std::string checkpoint_bytes(const MlpVectorField& model) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(model.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(l.cols));
  }
  for (const Vec& block : model.parameters()) {
    for (double v : block) detail::put_f64(out, v);
  }
  return out.str();
}

MlpVectorField parse_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[8];
  if (!in.read(magic, 8)) throw FormatError(Kind::Truncated, origin + ": truncated checkpoint header");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(Kind::BadMagic, origin + ": bad magic");
  std::uint32_t version = 0;
  std::uint32_t dim = 0;
  std::uint32_t count = 0;
  if (!detail::get_u32(in, version)) throw FormatError(Kind::Truncated, origin + ": truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::VersionMismatch, origin + ": checkpoint version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  if (!detail::get_u32(in, dim) || !detail::get_u32(in, count)) {
    throw FormatError(Kind::Truncated, origin + ": truncated checkpoint header");
  }
  std::vector<LayerShape> layers(count);
  std::size_t expected_values = 0;
  for (auto& l : layers) {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    if (!detail::get_u32(in, rows) || !detail::get_u32(in, cols)) {
      throw FormatError(Kind::Truncated, origin + ": truncated layer table");
    }
    l = {rows, cols};
    expected_values += std::size_t{rows} * cols + rows;
  }
  const std::size_t header = 20 + 8 * std::size_t{count};
  if (bytes.size() != header + 8 * expected_values) {
    throw FormatError(Kind::Truncated, origin + ": payload is " + std::to_string(bytes.size() - header) +
                                           " bytes but the declared layers need " +
                                           std::to_string(8 * expected_values));
  }
  std::vector<Vec> params;
  for (const auto& l : layers) {
    Vec w(l.rows * l.cols);
    Vec b(l.rows);
    for (double& v : w) detail::get_f64(in, v);
    for (double& v : b) detail::get_f64(in, v);
    params.push_back(std::move(w));
    params.push_back(std::move(b));
  }
  return MlpVectorField(dim, std::move(layers), std::move(params));
}

void save_checkpoint(const MlpVectorField& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Kind::Io, "cannot open " + path.string() + " for writing");
  const std::string bytes = checkpoint_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(Kind::Io, "write failed: " + path.string());
}

MlpVectorField load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::Io, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

}  // namespace mpcflow
