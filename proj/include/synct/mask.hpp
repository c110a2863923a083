#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace synct {

// Boolean attention mask; true means the key position is visible.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), allowed(r * c, fill ? 1 : 0) {}

  static Mask all(std::size_t r, std::size_t c) { return Mask(r, c, true); }

  bool operator()(std::size_t i, std::size_t j) const {
    return allowed[i * cols + j] != 0;
  }
  void set(std::size_t i, std::size_t j, bool value = true) {
    allowed[i * cols + j] = value ? 1 : 0;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace synct
