#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace alignforge {

// SHA-256 hex digest of a byte string.
std::string sha256_hex(std::string_view data);

// SHA-256 hex digest of a file's contents. Throws IoError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

// First 8 bytes of sha256(data), little-endian. Used for seed substreams.
std::uint64_t sha256_prefix64(std::string_view data);

}  // namespace alignforge
