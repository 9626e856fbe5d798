#include "latentdemo/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>

namespace latentdemo {

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xF];
  }
  return out;
}

EVP_MD_CTX* as_ctx(void* p) { return static_cast<EVP_MD_CTX*>(p); }

}  // namespace

Hasher::Hasher() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(as_ctx(ctx_), EVP_sha256(), nullptr) != 1) {
    throw RuntimeError("sha256: digest context initialization failed");
  }
}

Hasher::~Hasher() { EVP_MD_CTX_free(as_ctx(ctx_)); }

Hasher& Hasher::update(std::string_view data) {
  EVP_DigestUpdate(as_ctx(ctx_), data.data(), data.size());
  return *this;
}

Hasher& Hasher::update(std::span<const std::byte> data) {
  EVP_DigestUpdate(as_ctx(ctx_), data.data(), data.size());
  return *this;
}

Hasher& Hasher::field(std::string_view data) {
  field(static_cast<std::uint64_t>(data.size()));
  return update(data);
}

Hasher& Hasher::field(std::uint64_t value) {
  std::array<unsigned char, 8> le{};
  for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(value >> (8 * i));
  EVP_DigestUpdate(as_ctx(ctx_), le.data(), le.size());
  return *this;
}

std::string Hasher::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned len = 0;
  EVP_DigestFinal_ex(as_ctx(ctx_), md.data(), &len);
  return to_hex(md.data(), len);
}

std::string sha256_hex(std::string_view data) { return Hasher{}.update(data).hex(); }

std::string sha256_hex(std::span<const std::byte> data) { return Hasher{}.update(data).hex(); }

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::string_view label) {
  Hasher h;
  h.field(master).field(stage).field(label);
  const std::string hex = h.hex();
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

}  // namespace latentdemo
