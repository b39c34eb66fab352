#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstill/registry.hpp"
#include "fedstill/volume.hpp"

namespace fedstill::metrics {

inline constexpr double kThreshold = 0.5;

// Voxels with probability strictly above the threshold.
Mask binarize(std::span<const double> probs, GridDims dims, double threshold = kThreshold);

// 2|P&G| / (|P|+|G|); 1 when both are empty. ShapeMismatch on differing grids.
double dice_score(const Mask& pred, const Mask& gt);

// Mask voxels with at least one face neighbour outside the mask. Positions past
// the grid edge count as outside along axes longer than one voxel.
std::vector<std::size_t> boundary_voxels(const Mask& mask);

// Average symmetric surface distance in voxel units. EmptyMask names the empty
// argument ("pred" or "gt").
double assd(const Mask& pred, const Mask& gt);

struct ClassMetrics {
  std::string name;
  double dice_sum = 0.0;
  std::size_t n = 0;        // samples scored for DICE
  double assd_sum = 0.0;
  std::size_t assd_n = 0;   // samples with a defined ASSD
  std::size_t assd_empty = 0;

  double dice() const;  // NaN when n == 0
  double assd() const;  // NaN when assd_n == 0
};

class MetricReport {
 public:
  // Scores one sample for one class and accumulates it.
  void add(ClassId cls, const std::string& name, const Mask& pred, const Mask& gt);
  void add_values(ClassId cls, const std::string& name, double dice, std::optional<double> assd);

  const std::map<ClassId, ClassMetrics>& classes() const noexcept { return classes_; }
  bool has(ClassId cls) const { return classes_.count(cls) != 0; }
  double dice(ClassId cls) const;
  double assd(ClassId cls) const;

  // Means over classes with at least one valid sample, optionally restricted.
  double macro_dice() const;
  double macro_assd() const;
  double macro_dice(const ClassSet& subset) const;

  // class,dice,assd,n with 6 significant digits; classes in id order.
  std::string csv() const;
  std::string json() const;

 private:
  std::map<ClassId, ClassMetrics> classes_;
};

// Shared number formatting for every emitted table.
std::string format_number(double v);

}  // namespace fedstill::metrics
