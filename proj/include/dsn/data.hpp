#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dsn/matrix.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

using Label = std::uint32_t;

enum class Modality : std::uint8_t { kImage = 0, kSketch = 1 };

const char* to_string(Modality m);
Modality parse_modality(const std::string& text);

/// Feature vectors of one modality, one row per sample.
struct FeatureSet {
  Matrix features;
  std::vector<Label> labels;
  Modality modality = Modality::kImage;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  /// Sorted distinct labels.
  std::vector<Label> categories() const;
  /// Throws kCountMismatch / kNonFinite on a broken set.
  void validate() const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

struct ZeroShotSplit {
  std::vector<Label> seen;    // sorted
  std::vector<Label> unseen;  // sorted

  friend bool operator==(const ZeroShotSplit&, const ZeroShotSplit&) = default;
};

struct SynthConfig {
  std::size_t n_categories = 25;
  std::size_t dim = 64;
  std::size_t samples_per_category = 60;  // per modality
  double category_spread = 0.15;          // std of each category-mean coordinate
  double domain_gap = 2.0;                // norm of the shared sketch offset
  double image_noise = 0.03;
  double sketch_noise = 0.06;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  FeatureSet image;
  FeatureSet sketch;
};

/// Per category c a mean mu_c ~ N(0, spread^2 I); images are mu_c + image noise and
/// sketches mu_c + g + sketch noise, where g is one fixed offset shared by all
/// categories. Values are rounded to float so they survive the f32 file
/// format unchanged.
SyntheticData generate_synthetic(const SynthConfig& cfg);

ZeroShotSplit make_zero_shot_split(std::span<const Label> category_ids, std::size_t n_unseen,
                                   Rng& rng);

/// Rows whose label is in `categories`, original order preserved.
FeatureSet restrict(const FeatureSet& fs, std::span<const Label> categories);

// Feature file, little-endian:
//   "DSNF" | u32 version | u8 modality | u32 N | u32 D | N*D f32 | N u32 labels
inline constexpr std::uint32_t kFeatureFileVersion = 1;

void save_features(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path);
std::string encode_features(const FeatureSet& fs);
FeatureSet decode_features(const std::string& bytes);

/// CSV rows: label,f1,...,fD. Blank lines and lines starting with '#' are skipped.
FeatureSet import_csv(const std::filesystem::path& path, Modality modality);

// Split file: two lines, "seen: <ids...>" and "unseen: <ids...>".
void save_split(const ZeroShotSplit& split, const std::filesystem::path& path);
ZeroShotSplit load_split(const std::filesystem::path& path);

}  // namespace dsn
