#include "stealth/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "stealth/error.hpp"

namespace stealth {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("weight file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("weight file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_mlp(std::ostream& os, const Mlp& net) {
  os.write(kWeightMagic.data(), static_cast<std::streamsize>(kWeightMagic.size()));
  put_u32(os, kWeightFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& s : net.specs()) {
    put_u32(os, static_cast<std::uint32_t>(s.in));
    put_u32(os, static_cast<std::uint32_t>(s.out));
    put_u32(os, static_cast<std::uint32_t>(s.activation));
  }
  // Parameter block order is already weights-then-bias per layer.
  for (double v : net.parameters()) put_f64(os, v);
}

Mlp read_mlp(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kWeightMagic.data(), 8) != 0) {
    throw IoError("not a weight file (bad magic)");
  }
  const auto version = get_u32(is);
  if (version != kWeightFormatVersion) {
    throw IoError("unsupported weight format version " + std::to_string(version));
  }
  const auto count = get_u32(is);
  if (count == 0 || count > 1024) throw IoError("implausible layer count " + std::to_string(count));
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec s;
    s.in = get_u32(is);
    s.out = get_u32(is);
    const auto tag = get_u32(is);
    if (tag > static_cast<std::uint32_t>(Activation::softmax)) {
      throw IoError("unknown activation tag " + std::to_string(tag));
    }
    s.activation = static_cast<Activation>(tag);
    specs.push_back(s);
  }
  Mlp net(std::move(specs));
  for (double& v : net.parameters()) v = get_f64(is);
  return net;
}

void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_mlp(os, net);
  if (!os) throw IoError("failed writing " + path.string());
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_mlp(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace stealth
