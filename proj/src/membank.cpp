#include "dsn/membank.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error(ErrorCode::kInvalidArgument, "memory bank capacity must be >= 1");
}

void MemoryBank::update(std::span<const double> sketch, Label label, const Matrix& images,
                        std::span<const Label> image_labels) {
  if (dim_ != 0 && sketch.size() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "memory bank: sketch dimension " +
                                                   std::to_string(sketch.size()) + " != " +
                                                   std::to_string(dim_));
  }
  if (images.rows() != image_labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "memory bank: image rows and labels differ");
  }
  if (images.rows() > 0 && images.cols() != sketch.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "memory bank: image/sketch dimensions differ");
  }

  std::vector<double> image_mean(sketch.size(), 0.0);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < image_labels.size(); ++i) {
    if (image_labels[i] != label) continue;
    auto row = images.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) image_mean[j] += row[j];
    ++matches;
  }
  if (matches == 0) return;
  for (double& x : image_mean) x /= static_cast<double>(matches);

  dim_ = sketch.size();
  auto& slot = slots_[label];
  for (auto& e : slot) e.similarity = cosine(image_mean, e.feature);
  slot.push_back(BankEntry{std::vector<double>(sketch.begin(), sketch.end()), counter_++,
                           cosine(image_mean, sketch)});
  std::stable_sort(slot.begin(), slot.end(), [](const BankEntry& a, const BankEntry& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.counter < b.counter;
  });
  if (slot.size() > capacity_) slot.resize(capacity_);
}

void MemoryBank::update_batch(const Matrix& sketches, std::span<const Label> sketch_labels,
                              const Matrix& images, std::span<const Label> image_labels) {
  if (sketches.rows() != sketch_labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "memory bank: sketch rows and labels differ");
  }
  for (std::size_t i = 0; i < sketches.rows(); ++i) {
    update(sketches.row(i), sketch_labels[i], images, image_labels);
  }
}

std::optional<std::vector<double>> MemoryBank::prototype(Label category) const {
  auto it = slots_.find(category);
  if (it == slots_.end() || it->second.empty()) return std::nullopt;
  std::vector<double> mean(dim_, 0.0);
  for (const auto& e : it->second)
    for (std::size_t j = 0; j < dim_; ++j) mean[j] += e.feature[j];
  for (double& x : mean) x /= static_cast<double>(it->second.size());
  return mean;
}

const std::vector<BankEntry>& MemoryBank::entries(Label category) const {
  static const std::vector<BankEntry> kEmpty;
  auto it = slots_.find(category);
  return it == slots_.end() ? kEmpty : it->second;
}

std::string MemoryBank::export_csv() const {
  std::ostringstream out;
  out << "category,slot,counter";
  for (std::size_t j = 0; j < dim_; ++j) out << ",v" << j;
  out << '\n';
  char buf[32];
  for (const auto& [category, slot] : slots_) {
    for (std::size_t s = 0; s < slot.size(); ++s) {
      out << category << ',' << s << ',' << slot[s].counter;
      for (double x : slot[s].feature) {
        std::snprintf(buf, sizeof(buf), ",%.17g", x);
        out << buf;
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace dsn
