#include "spdnas/params.hpp"

#include <fstream>

#include "spdnas/binary_io.hpp"
#include "spdnas/error.hpp"

namespace spdnas {

std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::kStiefel:
      return "stiefel";
    case ParamKind::kSpd:
      return "spd";
    case ParamKind::kEuclidean:
      return "euclidean";
    case ParamKind::kAlpha:
      return "alpha";
    case ParamKind::kBuffer:
      return "buffer";
  }
  return "?";
}

std::size_t ParamStore::get_or_add(const std::string& name, ParamKind kind, const Matrix& init) {
  if (auto idx = find(name)) {
    const Param& p = params_[*idx];
    if (p.kind != kind || p.value.rows() != init.rows() || p.value.cols() != init.cols()) {
      throw ConfigError("parameter '" + name + "' is shared between incompatible shapes");
    }
    return *idx;
  }
  params_.push_back({name, kind, init});
  return params_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

bool ParamStore::is_weight(std::size_t i) const {
  const ParamKind k = params_.at(i).kind;
  return k == ParamKind::kStiefel || k == ParamKind::kSpd || k == ParamKind::kEuclidean;
}

std::size_t ParamStore::learnable_count(bool include_alpha) const {
  std::size_t n = 0;
  for (const Param& p : params_) {
    if (p.kind == ParamKind::kBuffer) continue;
    if (p.kind == ParamKind::kAlpha && !include_alpha) continue;
    n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(tmp.string() + ": cannot open for writing");
  os.write("SPDC", 4);
  binio::put_u32(os, 1);
  binio::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Param& p : params) {
    binio::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    binio::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    binio::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) binio::put_f64(os, p.value(i, j));
    }
  }
  os.close();
  if (!os) throw DataError(tmp.string() + ": write failed");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError(path.string() + ": rename failed: " + ec.message());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open checkpoint");
  binio::Reader r(is, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "SPDC") r.fail("bad magic (expected SPDC)");
  if (r.u32("version") != 1) r.fail("unsupported checkpoint version");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t len = r.u32("name length");
    if (len > 4096) r.fail("implausible name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "name");
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    const auto idx = params.find(name);
    if (!idx) r.fail("tensor '" + name + "' does not exist in the model");
    Matrix& dst = params[*idx].value;
    if (dst.rows() != static_cast<Eigen::Index>(rows) || dst.cols() != static_cast<Eigen::Index>(cols)) {
      r.fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
             ", model expects " + std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
    }
    for (Eigen::Index i = 0; i < dst.rows(); ++i) {
      for (Eigen::Index j = 0; j < dst.cols(); ++j) dst(i, j) = r.f64("tensor entry");
    }
  }
  if (!r.at_end()) r.fail("trailing bytes");
}

}  // namespace spdnas
