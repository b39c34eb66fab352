#pragma once

// Slow, obviously-correct reference versions of the metrics.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fedstill/volume.hpp"

namespace fedstill::check {

struct Voxel {
  long z, y, x;
};

inline bool inside(const Mask& m, long z, long y, long x) {
  const auto& d = m.dims;
  if (z < 0 || y < 0 || x < 0) return false;
  if (z >= static_cast<long>(d.depth) || y >= static_cast<long>(d.height) || x >= static_cast<long>(d.width))
    return false;
  return m.bits[d.index(z, y, x)] != 0;
}

// Face-neighbour boundary. Stepping off the grid only counts as leaving the
// mask along axes with more than one voxel; a mask with no such voxel is all
// boundary. Row-major order.
inline std::vector<Voxel> brute_boundary(const Mask& m) {
  const auto& d = m.dims;
  const long ext[3] = {static_cast<long>(d.depth), static_cast<long>(d.height), static_cast<long>(d.width)};
  std::vector<Voxel> out, all;
  for (long z = 0; z < ext[0]; ++z)
    for (long y = 0; y < ext[1]; ++y)
      for (long x = 0; x < ext[2]; ++x) {
        if (!inside(m, z, y, x)) continue;
        all.push_back({z, y, x});
        bool edge = false;
        for (int axis = 0; axis < 3 && !edge; ++axis) {
          if (ext[axis] == 1) continue;
          for (int s : {-1, 1}) {
            long p[3] = {z, y, x};
            p[axis] += s;
            if (!inside(m, p[0], p[1], p[2])) edge = true;
          }
        }
        if (edge) out.push_back({z, y, x});
      }
  return out.empty() ? all : out;
}

inline double brute_nearest(const Voxel& a, const std::vector<Voxel>& set) {
  long best = std::numeric_limits<long>::max();
  for (const auto& b : set) {
    const long dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
    best = std::min(best, dz * dz + dy * dy + dx * dx);
  }
  return std::sqrt(static_cast<double>(best));
}

// All-pairs nearest boundary distance, summed P->G then G->P.
inline double brute_assd(const std::vector<Voxel>& bp, const std::vector<Voxel>& bg) {
  double to_g = 0.0, to_p = 0.0;
  for (const auto& v : bp) to_g += brute_nearest(v, bg);
  for (const auto& v : bg) to_p += brute_nearest(v, bp);
  return (to_g + to_p) / static_cast<double>(bp.size() + bg.size());
}

inline double brute_assd(const Mask& p, const Mask& g) { return brute_assd(brute_boundary(p), brute_boundary(g)); }

inline double brute_dice(const Mask& p, const Mask& g) {
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.bits.size(); ++i) {
    np += p.bits[i] != 0;
    ng += g.bits[i] != 0;
    inter += p.bits[i] != 0 && g.bits[i] != 0;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

inline Mask mask_from_bits(GridDims dims, std::uint64_t pattern) {
  Mask m = Mask::empty(dims);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = (pattern >> i) & 1U;
  return m;
}

}  // namespace fedstill::check
