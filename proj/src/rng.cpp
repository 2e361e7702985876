#include "frsaudit/rng.hpp"

namespace frsaudit::rng {

std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view a,
                          std::string_view b) noexcept {
  return combine(combine(master, hash_string(a)), hash_string(b));
}

}  // namespace frsaudit::rng
