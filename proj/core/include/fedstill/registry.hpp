#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstill/tensor.hpp"

namespace fedstill {

using ClassId = std::uint32_t;
using ClassSet = std::set<ClassId>;

// Shared class vocabulary. Every participant building a registry from the same
// seed and names gets identical ids and embeddings.
class ClassRegistry {
 public:
  static constexpr std::size_t kEmbeddingDim = 16;

  ClassRegistry() = default;
  ClassRegistry(std::uint64_t seed, std::vector<std::string> names);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  bool contains(ClassId id) const noexcept { return id < names_.size(); }
  bool contains(std::string_view name) const noexcept;
  ClassId id_of(std::string_view name) const;  // UnknownClass
  const std::string& name_of(ClassId id) const;  // UnknownClass

  ClassSet ids_of(std::span<const std::string> names) const;
  std::vector<std::string> names_of(const ClassSet& ids) const;

  // [size, kEmbeddingDim], unit rows.
  const tensor::Tensor& embeddings() const noexcept { return table_; }
  std::span<const double> embedding(ClassId id) const;

  friend bool operator==(const ClassRegistry& a, const ClassRegistry& b) {
    return a.seed_ == b.seed_ && a.names_ == b.names_;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<std::string> names_;
  tensor::Tensor table_;
};

// Pseudo-random unit vector keyed by (seed, class name).
std::vector<double> class_embedding(std::uint64_t seed, std::string_view name);

}  // namespace fedstill
