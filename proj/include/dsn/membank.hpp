#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/matrix.hpp"

namespace dsn {

struct BankEntry {
  std::vector<double> feature;
  std::uint64_t counter = 0;  // insertion order, strictly increasing
  double similarity = 0.0;    // cosine to the image mean of the last update

  friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

/// Per-category store of the k sketch embeddings closest (by cosine) to the
/// mean same-category image embedding of the batch that last updated it.
/// Entries are detached copies; nothing here carries gradient.
class MemoryBank {
 public:
  static constexpr std::size_t kDefaultCapacity = 10;

  explicit MemoryBank(std::size_t capacity = kDefaultCapacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t counter() const { return counter_; }

  /// Offers one sketch embedding to its category's slots. A sketch whose label
  /// has no image in the batch leaves the bank untouched.
  void update(std::span<const double> sketch, Label label, const Matrix& images,
              std::span<const Label> image_labels);

  /// update() for each sketch row, in row order.
  void update_batch(const Matrix& sketches, std::span<const Label> sketch_labels,
                    const Matrix& images, std::span<const Label> image_labels);

  /// Mean of the stored vectors; nullopt for an empty category.
  std::optional<std::vector<double>> prototype(Label category) const;

  /// Entries sorted by descending similarity (ties: older first).
  const std::vector<BankEntry>& entries(Label category) const;
  const std::map<Label, std::vector<BankEntry>>& slots() const { return slots_; }

  /// category,slot,counter,v0,...,v{D-1}
  std::string export_csv() const;

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  std::size_t capacity_;
  std::size_t dim_ = 0;
  std::uint64_t counter_ = 0;
  std::map<Label, std::vector<BankEntry>> slots_;
};

}  // namespace dsn
