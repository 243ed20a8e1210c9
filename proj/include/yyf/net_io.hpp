#pragma once

#include <filesystem>

#include "yyf/dense_net.hpp"
#include "yyf/rom_net.hpp"

namespace yyf {

/// Network parameter files: "YYFNET01", u32 version, u32 kind, architecture
/// fields (u32 each), then the flat parameter vector as a u64 count followed
/// by little-endian doubles.
void write_dense_net(const DenseNet& net, const std::filesystem::path& path);
DenseNet read_dense_net(const std::filesystem::path& path);
void write_rom_net(const RomNet& net, const std::filesystem::path& path);
RomNet read_rom_net(const std::filesystem::path& path);

}  // namespace yyf
