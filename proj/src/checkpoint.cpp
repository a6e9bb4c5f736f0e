#include "udama/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace udama {
namespace {

constexpr std::array<char, 8> kMagic = {'U', 'D', 'A', 'M', 'A', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

std::string get_str(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& os, const ModelParams& params) {
  auto& p = const_cast<ModelParams&>(params);
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  const NetConfig& c = p.cfg;
  for (std::uint64_t v : {c.recurrent_units, c.recurrent_layers, c.meta_hidden, c.disc_hidden, c.ts_features, c.meta_features})
    put<std::uint64_t>(os, v);
  put<double>(os, c.dropout);
  put<double>(os, c.variance_floor);
  put<std::uint8_t>(os, p.freeze_applied ? 1 : 0);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(p.trainable.size()));
  for (const auto& [name, flag] : p.trainable) {
    put_str(os, name);
    put<std::uint8_t>(os, flag ? 1 : 0);
  }
  auto tensors = p.tensors();
  auto buffers = p.buffers();
  tensors.insert(tensors.end(), buffers.begin(), buffers.end());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_str(os, t.name);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols));
    os.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(t.size * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

ModelParams load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  NetConfig c;
  c.recurrent_units = get<std::uint64_t>(is);
  c.recurrent_layers = get<std::uint64_t>(is);
  c.meta_hidden = get<std::uint64_t>(is);
  c.disc_hidden = get<std::uint64_t>(is);
  c.ts_features = get<std::uint64_t>(is);
  c.meta_features = get<std::uint64_t>(is);
  c.dropout = get<double>(is);
  c.variance_floor = get<double>(is);
  ModelParams p = ModelParams::zeros(c);
  p.freeze_applied = get<std::uint8_t>(is) != 0;
  const auto n_flags = get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < n_flags; ++k) {
    const std::string name = get_str(is);
    const bool flag = get<std::uint8_t>(is) != 0;
    if (!p.trainable.count(name)) throw std::runtime_error("checkpoint: unknown layer '" + name + "'");
    p.trainable[name] = flag;
  }
  auto tensors = p.tensors();
  auto buffers = p.buffers();
  tensors.insert(tensors.end(), buffers.begin(), buffers.end());
  const auto n_tensors = get<std::uint32_t>(is);
  if (n_tensors != tensors.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (auto& t : tensors) {
    const std::string name = get_str(is);
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (name != t.name || rows != static_cast<std::uint64_t>(t.rows) || cols != static_cast<std::uint64_t>(t.cols))
      throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    is.read(reinterpret_cast<char*>(t.data), static_cast<std::streamsize>(t.size * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
  save_checkpoint(os, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return load_checkpoint(is);
}

}  // namespace udama
