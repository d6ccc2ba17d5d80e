#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/matrix.hpp"
#include "dsn/metadata.hpp"
#include "dsn/model.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

enum class Metric { kCosine, kHamming };

const char* to_string(Metric m);
Metric parse_metric(const std::string& text);

/// Packed binary codes, one row of ceil(bits/64) words per item. Bit j of a
/// row lives in word j/64 at position j%64.
struct BitCodes {
  std::size_t rows = 0;
  std::size_t bits = 0;
  std::vector<std::uint64_t> words;

  BitCodes() = default;
  BitCodes(std::size_t rows, std::size_t bits);

  std::size_t words_per_row() const { return (bits + 63) / 64; }
  std::span<const std::uint64_t> row(std::size_t r) const {
    return {words.data() + r * words_per_row(), words_per_row()};
  }
  bool bit(std::size_t r, std::size_t j) const;
  void set(std::size_t r, std::size_t j, bool value);

  friend bool operator==(const BitCodes&, const BitCodes&) = default;
};

std::size_t hamming_distance(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

/// Gallery indices by descending cosine; ties by ascending index.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const Matrix& gallery);
/// Gallery indices by ascending Hamming distance; ties by ascending index.
std::vector<std::size_t> rank_gallery(std::span<const std::uint64_t> query, const BitCodes& gallery);

/// (1/total_relevant) * sum over relevant ranks r of precision@r.
/// Throws kProtocolViolation when total_relevant is 0.
double average_precision(std::span<const std::uint8_t> relevance, std::size_t total_relevant);

inline constexpr std::size_t kPrecisionCutoff = 100;

/// Hits in the top min(k, n) divided by k.
double precision_at_k(std::span<const std::uint8_t> relevance, std::size_t k = kPrecisionCutoff);

struct ItqModel {
  std::vector<double> mean;  // D
  Matrix pca;                // D x bits, orthonormal columns
  Matrix rotation;           // bits x bits, orthogonal
  std::size_t bits = 0;
  /// Quantization loss |B - V R|_F^2 before each iteration, plus the final one.
  std::vector<double> loss_trace;
  /// max|R^T R - I| after each rotation update.
  std::vector<double> orthogonality_trace;
};

inline constexpr std::size_t kItqIterations = 50;

/// Centres, projects onto the top-`bits` principal axes, then alternates
/// B = sign(V R) with the orthogonal Procrustes update of R. `initial_rotation`
/// overrides the random start. Throws kRankDeficient when the covariance has
/// fewer than `bits` non-negligible eigenvalues.
ItqModel itq_fit(const Matrix& features, std::size_t bits, Rng& rng,
                 std::size_t iterations = kItqIterations,
                 const Matrix* initial_rotation = nullptr);

/// sign((x - mean) * pca * R) as bits; sign(0) counts as +1 (bit set).
BitCodes itq_encode(const ItqModel& model, const Matrix& features);

/// Codes whose bits are the signs of the given real rows (identity hash).
BitCodes sign_codes(const Matrix& values);

// ITQ model file, little-endian:
//   "DSNQ" | u32 version | u32 D | u32 bits | D mean | D*bits pca | bits*bits rotation, all f64
inline constexpr std::uint32_t kItqFileVersion = 1;

std::string encode_itq(const ItqModel& model);
ItqModel decode_itq(const std::string& bytes);
void save_itq(const ItqModel& model, const std::filesystem::path& path);
ItqModel load_itq(const std::filesystem::path& path);

/// One line per row: label,hex code (word 0 first, 16 hex digits per word).
std::string codes_csv(const BitCodes& codes, std::span<const Label> labels);

struct RetrievalReport {
  Metric metric = Metric::kCosine;
  std::size_t dimension = 0;  // embedding size or code length
  std::vector<Label> query_labels;
  std::vector<double> ap;
  std::vector<double> prec_at_100;
  double map = 0.0;
  double mean_prec_at_100 = 0.0;
  Metadata metadata;

  /// Metadata as "# key=value", rows query,label,ap,prec_at_100, then a
  /// closing "summary" row carrying mAP@all and Prec@100.
  std::string to_csv() const;
};

/// Scores every query against the full gallery ranking. Throws
/// kProtocolViolation naming the first query whose category is absent.
RetrievalReport score_rankings(std::span<const Label> query_labels,
                               std::span<const Label> gallery_labels,
                               const std::vector<std::vector<std::size_t>>& rankings);

RetrievalReport evaluate_embeddings(const Matrix& queries, std::span<const Label> query_labels,
                                    const Matrix& gallery, std::span<const Label> gallery_labels);
RetrievalReport evaluate_codes(const BitCodes& queries, std::span<const Label> query_labels,
                               const BitCodes& gallery, std::span<const Label> gallery_labels);

/// Embeds both sets with the encoder and ranks by cosine, or by Hamming
/// distance over `itq` codes when metric is kHamming (itq required then).
RetrievalReport evaluate(const ModelParams& params, const FeatureSet& query_sketches,
                         const FeatureSet& gallery_images, Metric metric,
                         const ItqModel* itq = nullptr);

/// Entry (i, j): cosine between category i's mean sketch embedding and
/// category j's mean image embedding.
Matrix similarity_matrix(const ModelParams& params, const FeatureSet& sketches,
                         const FeatureSet& images, std::span<const Label> categories);

std::string similarity_matrix_csv(const Matrix& sim, std::span<const Label> categories);

}  // namespace dsn
