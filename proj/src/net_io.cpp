#include "yyf/net_io.hpp"

#include <fstream>

#include "yyf/binary_io.hpp"

namespace yyf {

namespace {

constexpr char kMagic[9] = "YYFNET01";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDense = 1;
constexpr std::uint32_t kRom = 2;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

void read_header(std::istream& in, std::uint32_t kind) {
  binary::expect_magic(in, kMagic, "network parameter");
  if (binary::read_le<std::uint32_t>(in) != kVersion) throw FormatError("unsupported network file version");
  if (binary::read_le<std::uint32_t>(in) != kind) throw FormatError("network file holds a different network kind");
}

}  // namespace

void write_dense_net(const DenseNet& net, const std::filesystem::path& path) {
  auto out = open_out(path);
  binary::write_magic(out, kMagic);
  binary::write_le<std::uint32_t>(out, kVersion);
  binary::write_le<std::uint32_t>(out, kDense);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.input_dim()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.hidden_layers()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.width()));
  binary::write_le<std::uint32_t>(out, net.activation() == Activation::Tanh ? 0u : 1u);
  binary::write_doubles(out, net.params());
}

DenseNet read_dense_net(const std::filesystem::path& path) {
  auto in = open_in(path);
  read_header(in, kDense);
  const auto input_dim = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto hidden = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto width = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto act = binary::read_le<std::uint32_t>(in) == 0 ? Activation::Tanh : Activation::Identity;
  DenseNet net(input_dim, hidden, width, act);
  Vec params = binary::read_doubles(in);
  if (params.size() != net.params().size()) throw FormatError("parameter count does not match architecture");
  net.params() = std::move(params);
  return net;
}

void write_rom_net(const RomNet& net, const std::filesystem::path& path) {
  auto out = open_out(path);
  binary::write_magic(out, kMagic);
  binary::write_le<std::uint32_t>(out, kVersion);
  binary::write_le<std::uint32_t>(out, kRom);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.coeff_dim()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.time_feature_dim()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.n_blocks()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.width()));
  binary::write_doubles(out, net.params());
}

RomNet read_rom_net(const std::filesystem::path& path) {
  auto in = open_in(path);
  read_header(in, kRom);
  const auto k = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto f = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto blocks = static_cast<int>(binary::read_le<std::uint32_t>(in));
  const auto width = static_cast<int>(binary::read_le<std::uint32_t>(in));
  RomNet net(k, f, blocks, width);
  Vec params = binary::read_doubles(in);
  if (params.size() != net.params().size()) throw FormatError("parameter count does not match architecture");
  net.params() = std::move(params);
  return net;
}

}  // namespace yyf
