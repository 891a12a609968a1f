#pragma once

#include "gseg/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace gseg {

enum class TileCategory { slum, non_slum, mixed };

const char *to_string(TileCategory category);
std::optional<TileCategory> parse_category(const std::string &text);

// Slum iff every pixel is 1, NonSlum iff every pixel is 0, Mixed otherwise.
// Throws on non-binary masks.
TileCategory categorize_tile(const Tensor &mask);

struct TileRecord {
  std::uint64_t id = 0;
  Tensor image; // [3, H, W], values k / 255
  Tensor mask;  // [H, W], annotation in {0, 1}
  TileCategory category = TileCategory::non_slum;

  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }
};

} // namespace gseg
