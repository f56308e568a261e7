#include "cxr/parameters.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cxr {
namespace {

constexpr char kMagic[8] = {'C', 'X', 'R', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated parameter archive " + path.string());
  return v;
}

}  // namespace

void write_parameter_archive(const std::filesystem::path& path,
                             const ParameterSet<double>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    const auto& name = params.name(idx);
    const auto& m = params[idx];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ParameterSet<double> read_parameter_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parameter archive " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error(path.string() + " is not a parameter archive");
  if (get<std::uint32_t>(in, path) != kVersion)
    throw std::runtime_error("unsupported parameter archive version in " + path.string());
  const auto count = get<std::uint32_t>(in, path);
  ParameterSet<double> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    const auto idx = params.add(name, rows, cols);
    in.read(reinterpret_cast<char*>(params[idx].data()),
            static_cast<std::streamsize>(rows * cols * static_cast<Eigen::Index>(sizeof(double))));
    if (!in) throw std::runtime_error("truncated parameter archive " + path.string());
  }
  return params;
}

}  // namespace cxr
