#include "alignforge/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <vector>

#include "alignforge/common.hpp"

namespace alignforge {

namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr ||
      EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, out.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256: digest computation failed");
  }
  EVP_MD_CTX_free(ctx);
  return out;
}

std::string to_hex(const std::array<unsigned char, 32>& raw) {
  static const char* digits = "0123456789abcdef";
  std::string hex;
  hex.reserve(64);
  for (unsigned char b : raw) {
    hex.push_back(digits[b >> 4]);
    hex.push_back(digits[b & 0xF]);
  }
  return hex;
}

}  // namespace

std::string sha256_hex(std::string_view data) { return to_hex(sha256_raw(data)); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("sha256: cannot open " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(contents);
}

std::uint64_t sha256_prefix64(std::string_view data) {
  auto raw = sha256_raw(data);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | raw[static_cast<size_t>(i)];
  return v;
}

}  // namespace alignforge
