#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fedstill {

struct GridDims {
  std::size_t depth = 1;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t voxels() const noexcept { return depth * height * width; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * height + y) * width + x;
  }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

// D x H x W intensities in [0, 1], row-major.
struct Volume {
  GridDims dims;
  std::vector<double> intensity;

  friend bool operator==(const Volume&, const Volume&) = default;
};

// Binary voxel mask over a grid.
struct Mask {
  GridDims dims;
  std::vector<std::uint8_t> bits;

  static Mask empty(GridDims dims) { return Mask{dims, std::vector<std::uint8_t>(dims.voxels(), 0)}; }
  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace fedstill
