#pragma once

// Binary checkpoint container. The byte layout is described in docs/checkpoint_format.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lode/latent_ode.hpp"

namespace lode::checkpoint {

inline constexpr char kMagic[8] = {'L', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> serialize(const model::ModelParams& params);
/// Throws VersionMismatchError for another format version, IoError for corrupt input.
model::ModelParams deserialize(const std::vector<std::uint8_t>& bytes);

void save(const model::ModelParams& params, const std::filesystem::path& path);
model::ModelParams load(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Lowercase hex SHA-256.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::string& text);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace lode::checkpoint
