#include "fedstill/registry.hpp"

#include <algorithm>
#include <cmath>

#include "fedstill/error.hpp"
#include "fedstill/random.hpp"

namespace fedstill {

std::vector<double> class_embedding(std::uint64_t seed, std::string_view name) {
  Rng rng(derive_seed(seed, "class-embedding", fnv1a(name)));
  std::vector<double> e(ClassRegistry::kEmbeddingDim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : e) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& v : e) v /= norm;
  return e;
}

ClassRegistry::ClassRegistry(std::uint64_t seed, std::vector<std::string> names)
    : seed_(seed), names_(std::move(names)) {
  std::vector<double> values;
  values.reserve(names_.size() * kEmbeddingDim);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (std::find(names_.begin(), names_.begin() + static_cast<std::ptrdiff_t>(i), names_[i]) !=
        names_.begin() + static_cast<std::ptrdiff_t>(i)) {
      fail(ErrorCode::kValidationError, "duplicate class name '" + names_[i] + "'");
    }
    const auto e = class_embedding(seed_, names_[i]);
    values.insert(values.end(), e.begin(), e.end());
  }
  table_ = tensor::Tensor({names_.size(), kEmbeddingDim}, std::move(values));
}

bool ClassRegistry::contains(std::string_view name) const noexcept {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

ClassId ClassRegistry::id_of(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) fail(ErrorCode::kUnknownClass, "class '" + std::string(name) + "'");
  return static_cast<ClassId>(it - names_.begin());
}

const std::string& ClassRegistry::name_of(ClassId id) const {
  if (!contains(id)) fail(ErrorCode::kUnknownClass, "class id " + std::to_string(id));
  return names_[id];
}

ClassSet ClassRegistry::ids_of(std::span<const std::string> names) const {
  ClassSet out;
  for (const auto& n : names) out.insert(id_of(n));
  return out;
}

std::vector<std::string> ClassRegistry::names_of(const ClassSet& ids) const {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(name_of(id));
  return out;
}

std::span<const double> ClassRegistry::embedding(ClassId id) const {
  if (!contains(id)) fail(ErrorCode::kUnknownClass, "class id " + std::to_string(id));
  return table_.values().subspan(id * kEmbeddingDim, kEmbeddingDim);
}

}  // namespace fedstill
