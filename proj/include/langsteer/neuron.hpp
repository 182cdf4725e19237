#pragma once

#include <compare>
#include <cstddef>
#include <string>

namespace langsteer {

/// Address of one FFN activation unit: hidden unit `unit` of block `layer`.
struct NeuronId {
  int layer = 0;
  int unit = 0;

  auto operator<=>(const NeuronId&) const = default;

  std::size_t flat(int d_ff) const {
    return static_cast<std::size_t>(layer) * static_cast<std::size_t>(d_ff) +
           static_cast<std::size_t>(unit);
  }

  static NeuronId from_flat(std::size_t index, int d_ff) {
    return {static_cast<int>(index / static_cast<std::size_t>(d_ff)),
            static_cast<int>(index % static_cast<std::size_t>(d_ff))};
  }

  std::string key() const { return std::to_string(layer) + ":" + std::to_string(unit); }
};

}  // namespace langsteer
