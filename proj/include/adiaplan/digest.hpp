#pragma once

// SHA-256 digests for provenance records. Requires linking OpenSSL::Crypto.

#include <adiaplan/error.hpp>

#include <array>
#include <fstream>
#include <string>
#include <string_view>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace adiaplan {

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Numerical, "SHA-256 computation failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

inline std::string sha256_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path + " for hashing");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

} // namespace adiaplan
