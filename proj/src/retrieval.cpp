#include "dsn/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/format.hpp"
#include "dsn/io.hpp"

namespace dsn {

const char* to_string(Metric m) { return m == Metric::kCosine ? "cosine" : "hamming"; }

Metric parse_metric(const std::string& text) {
  if (text == "cosine") return Metric::kCosine;
  if (text == "hamming") return Metric::kHamming;
  throw Error(ErrorCode::kConfig, "unknown metric '" + text + "' (expected cosine or hamming)");
}

BitCodes::BitCodes(std::size_t rows_, std::size_t bits_) : rows(rows_), bits(bits_) {
  words.assign(rows * words_per_row(), 0);
}

bool BitCodes::bit(std::size_t r, std::size_t j) const {
  return (words[r * words_per_row() + j / 64] >> (j % 64)) & 1U;
}

void BitCodes::set(std::size_t r, std::size_t j, bool value) {
  auto& w = words[r * words_per_row() + j / 64];
  const std::uint64_t mask = std::uint64_t{1} << (j % 64);
  w = value ? (w | mask) : (w & ~mask);
}

std::size_t hamming_distance(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "hamming: code lengths differ");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
  return d;
}

std::vector<std::size_t> rank_gallery(std::span<const double> query, const Matrix& gallery) {
  if (gallery.rows() > 0 && gallery.cols() != query.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "rank_gallery: query/gallery dimensions differ");
  }
  std::vector<double> score(gallery.rows());
  for (std::size_t i = 0; i < gallery.rows(); ++i) score[i] = cosine(query, gallery.row(i));
  std::vector<std::size_t> order(gallery.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

std::vector<std::size_t> rank_gallery(std::span<const std::uint64_t> query, const BitCodes& gallery) {
  if (gallery.rows > 0 && gallery.words_per_row() != query.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "rank_gallery: code lengths differ");
  }
  std::vector<std::size_t> dist(gallery.rows);
  for (std::size_t i = 0; i < gallery.rows; ++i) dist[i] = hamming_distance(query, gallery.row(i));
  std::vector<std::size_t> order(gallery.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

double average_precision(std::span<const std::uint8_t> relevance, std::size_t total_relevant) {
  if (total_relevant == 0) {
    throw Error(ErrorCode::kProtocolViolation, "average_precision: no relevant items in gallery");
  }
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (!relevance[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits > total_relevant) {
    throw Error(ErrorCode::kInvalidArgument, "average_precision: more hits than relevant items");
  }
  return sum / static_cast<double>(total_relevant);
}

double precision_at_k(std::span<const std::uint8_t> relevance, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "precision_at_k: k must be >= 1");
  const std::size_t n = std::min(k, relevance.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) hits += relevance[r] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

namespace {

Matrix sign_matrix(const Matrix& z) {
  Matrix b = z;
  for (double& x : b.values()) x = x >= 0.0 ? 1.0 : -1.0;
  return b;
}

double squared_distance(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.values()[k] - b.values()[k];
    s += d * d;
  }
  return s;
}

}  // namespace

ItqModel itq_fit(const Matrix& features, std::size_t bits, Rng& rng, std::size_t iterations,
                 const Matrix* initial_rotation) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (bits == 0 || bits > d) {
    throw Error(ErrorCode::kInvalidArgument, "itq: bits must be in [1, feature dimension]");
  }
  if (n <= bits) throw Error(ErrorCode::kInvalidArgument, "itq: need more samples than bits");
  if (!features.all_finite()) throw Error(ErrorCode::kNonFinite, "itq: non-finite features");

  ItqModel model;
  model.bits = bits;
  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += features(i, j);
  for (double& m : model.mean) m /= static_cast<double>(n);

  Matrix centred = features;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centred(i, j) -= model.mean[j];

  Matrix cov = matmul_at(centred, centred);
  for (double& x : cov.values()) x /= static_cast<double>(n - 1);
  const Svd eig = svd_small(cov);
  const double top = eig.sigma.empty() ? 0.0 : eig.sigma[0];
  std::size_t rank = 0;
  for (double s : eig.sigma) rank += (top > 0.0 && s > 1e-10 * top) ? 1 : 0;
  if (rank < bits) {
    throw Error(ErrorCode::kRankDeficient, "itq: covariance rank " + std::to_string(rank) +
                                               " < " + std::to_string(bits) + " bits");
  }
  model.pca = Matrix(d, bits);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < bits; ++j) model.pca(i, j) = eig.u(i, j);

  const Matrix v = matmul(centred, model.pca);
  if (initial_rotation) {
    if (initial_rotation->rows() != bits || initial_rotation->cols() != bits) {
      throw Error(ErrorCode::kDimensionMismatch, "itq: initial rotation must be bits x bits");
    }
    model.rotation = *initial_rotation;
  } else {
    model.rotation = random_orthogonal(bits, rng);
  }

  for (std::size_t it = 0; it < iterations; ++it) {
    const Matrix z = matmul(v, model.rotation);
    const Matrix b = sign_matrix(z);
    model.loss_trace.push_back(squared_distance(b, z));
    // max_R tr(B^T V R): with B^T V = U S W^T the optimum is R = W U^T.
    const Svd s = svd_small(matmul_at(b, v));
    model.rotation = matmul_bt(s.v, s.u);
    model.orthogonality_trace.push_back(orthogonality_error(model.rotation));
  }
  const Matrix z = matmul(v, model.rotation);
  model.loss_trace.push_back(squared_distance(sign_matrix(z), z));
  return model;
}

BitCodes itq_encode(const ItqModel& model, const Matrix& features) {
  if (features.cols() != model.mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "itq_encode: feature dimension mismatch");
  }
  Matrix centred = features;
  for (std::size_t i = 0; i < centred.rows(); ++i)
    for (std::size_t j = 0; j < centred.cols(); ++j) centred(i, j) -= model.mean[j];
  return sign_codes(matmul(matmul(centred, model.pca), model.rotation));
}

BitCodes sign_codes(const Matrix& values) {
  BitCodes codes(values.rows(), values.cols());
  for (std::size_t i = 0; i < values.rows(); ++i)
    for (std::size_t j = 0; j < values.cols(); ++j) codes.set(i, j, values(i, j) >= 0.0);
  return codes;
}

std::string encode_itq(const ItqModel& model) {
  const std::size_t d = model.mean.size();
  if (model.pca.rows() != d || model.pca.cols() != model.bits || model.rotation.rows() != model.bits ||
      model.rotation.cols() != model.bits) {
    throw Error(ErrorCode::kDimensionMismatch, "itq model: inconsistent shapes");
  }
  io::Writer w;
  w.put_bytes("DSNQ");
  w.put<std::uint32_t>(kItqFileVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.bits));
  for (double x : model.mean) w.put<double>(x);
  for (double x : model.pca.values()) w.put<double>(x);
  for (double x : model.rotation.values()) w.put<double>(x);
  return w.bytes();
}

ItqModel decode_itq(const std::string& bytes) {
  io::Reader r(bytes);
  if (bytes.size() < 4 || r.get_bytes(4) != "DSNQ") throw Error(ErrorCode::kBadMagic, "bad magic: not an ITQ model file");
  const auto version = r.get<std::uint32_t>();
  if (version != kItqFileVersion) {
    throw Error(ErrorCode::kVersionMismatch, "ITQ model version " + std::to_string(version) + " unsupported");
  }
  const std::size_t d = r.get<std::uint32_t>();
  const std::size_t bits = r.get<std::uint32_t>();
  const std::size_t expected = (d + d * bits + bits * bits) * sizeof(double);
  if (r.remaining() < expected) throw Error(ErrorCode::kTruncated, "truncated ITQ model");
  if (r.remaining() > expected) throw Error(ErrorCode::kCountMismatch, "ITQ model longer than declared");
  ItqModel m;
  m.bits = bits;
  m.mean.resize(d);
  m.pca = Matrix(d, bits);
  m.rotation = Matrix(bits, bits);
  for (double& x : m.mean) x = r.get<double>();
  for (double& x : m.pca.values()) x = r.get<double>();
  for (double& x : m.rotation.values()) x = r.get<double>();
  return m;
}

void save_itq(const ItqModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_itq(model));
}

ItqModel load_itq(const std::filesystem::path& path) { return decode_itq(io::read_file(path)); }

std::string codes_csv(const BitCodes& codes, std::span<const Label> labels) {
  if (labels.size() != codes.rows) throw Error(ErrorCode::kCountMismatch, "codes_csv: label count differs from rows");
  std::string out = "label,code\n";
  static constexpr char kHex[] = "0123456789abcdef";
  for (std::size_t i = 0; i < codes.rows; ++i) {
    out += std::to_string(labels[i]);
    out += ',';
    for (std::uint64_t w : codes.row(i)) {
      for (int s = 60; s >= 0; s -= 4) out += kHex[(w >> s) & 0xf];
    }
    out += '\n';
  }
  return out;
}

std::string RetrievalReport::to_csv() const {
  std::ostringstream out;
  out << "# metric=" << to_string(metric) << '\n';
  out << "# dimension=" << dimension << '\n';
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  out << "query,label,ap,prec_at_100\n";
  for (std::size_t i = 0; i < ap.size(); ++i) {
    out << i << ',' << query_labels[i] << ',' << fmt_exact(ap[i]) << ','
        << fmt_exact(prec_at_100[i]) << '\n';
  }
  out << "summary,mAP@all=" << fmt_exact(map) << ",Prec@100=" << fmt_exact(mean_prec_at_100)
      << ",queries=" << ap.size() << '\n';
  return out.str();
}

RetrievalReport score_rankings(std::span<const Label> query_labels,
                               std::span<const Label> gallery_labels,
                               const std::vector<std::vector<std::size_t>>& rankings) {
  if (rankings.size() != query_labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "score_rankings: one ranking per query required");
  }
  RetrievalReport report;
  report.query_labels.assign(query_labels.begin(), query_labels.end());
  report.metadata = {{"ap_variant", "mean precision at relevant hits over all relevant in gallery"},
                     {"prec_at_100_divisor", std::to_string(kPrecisionCutoff)},
                     {"tie_break", "ascending gallery index"}};
  std::vector<std::uint8_t> relevance(gallery_labels.size());
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const std::size_t total = static_cast<std::size_t>(
        std::count(gallery_labels.begin(), gallery_labels.end(), query_labels[q]));
    if (total == 0) {
      throw Error(ErrorCode::kProtocolViolation,
                  "query " + std::to_string(q) + ": category " + std::to_string(query_labels[q]) +
                      " absent from gallery");
    }
    const auto& order = rankings[q];
    if (order.size() != gallery_labels.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "score_rankings: ranking must cover the gallery");
    }
    for (std::size_t r = 0; r < order.size(); ++r) {
      relevance[r] = gallery_labels[order[r]] == query_labels[q] ? 1 : 0;
    }
    report.ap.push_back(average_precision(relevance, total));
    report.prec_at_100.push_back(precision_at_k(relevance));
  }
  if (!report.ap.empty()) {
    const double n = static_cast<double>(report.ap.size());
    report.map = std::accumulate(report.ap.begin(), report.ap.end(), 0.0) / n;
    report.mean_prec_at_100 =
        std::accumulate(report.prec_at_100.begin(), report.prec_at_100.end(), 0.0) / n;
  }
  return report;
}

RetrievalReport evaluate_embeddings(const Matrix& queries, std::span<const Label> query_labels,
                                    const Matrix& gallery, std::span<const Label> gallery_labels) {
  if (queries.rows() != query_labels.size() || gallery.rows() != gallery_labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "evaluate: labels and rows differ");
  }
  std::vector<std::vector<std::size_t>> rankings;
  rankings.reserve(queries.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) rankings.push_back(rank_gallery(queries.row(q), gallery));
  RetrievalReport r = score_rankings(query_labels, gallery_labels, rankings);
  r.metric = Metric::kCosine;
  r.dimension = queries.cols();
  return r;
}

RetrievalReport evaluate_codes(const BitCodes& queries, std::span<const Label> query_labels,
                               const BitCodes& gallery, std::span<const Label> gallery_labels) {
  if (queries.rows != query_labels.size() || gallery.rows != gallery_labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "evaluate: labels and rows differ");
  }
  if (queries.bits != gallery.bits) throw Error(ErrorCode::kDimensionMismatch, "evaluate: code lengths differ");
  std::vector<std::vector<std::size_t>> rankings;
  rankings.reserve(queries.rows);
  for (std::size_t q = 0; q < queries.rows; ++q) rankings.push_back(rank_gallery(queries.row(q), gallery));
  RetrievalReport r = score_rankings(query_labels, gallery_labels, rankings);
  r.metric = Metric::kHamming;
  r.dimension = queries.bits;
  return r;
}

RetrievalReport evaluate(const ModelParams& params, const FeatureSet& query_sketches,
                         const FeatureSet& gallery_images, Metric metric, const ItqModel* itq) {
  const Matrix q = encode(params, query_sketches.features);
  const Matrix g = encode(params, gallery_images.features);
  if (metric == Metric::kCosine) {
    return evaluate_embeddings(q, query_sketches.labels, g, gallery_images.labels);
  }
  if (!itq) throw Error(ErrorCode::kInvalidArgument, "evaluate: hamming metric needs an ITQ model");
  return evaluate_codes(itq_encode(*itq, q), query_sketches.labels, itq_encode(*itq, g),
                        gallery_images.labels);
}

namespace {

std::vector<double> mean_embedding(const Matrix& emb, std::span<const Label> labels, Label c) {
  std::vector<double> mean(emb.cols(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != c) continue;
    auto r = emb.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
    ++count;
  }
  if (count == 0) {
    throw Error(ErrorCode::kEmptyCategory, "category " + std::to_string(c) + " has no samples");
  }
  for (double& x : mean) x /= static_cast<double>(count);
  return mean;
}

}  // namespace

Matrix similarity_matrix(const ModelParams& params, const FeatureSet& sketches,
                         const FeatureSet& images, std::span<const Label> categories) {
  const Matrix es = encode(params, sketches.features);
  const Matrix ei = encode(params, images.features);
  std::vector<std::vector<double>> sketch_means, image_means;
  for (Label c : categories) {
    sketch_means.push_back(mean_embedding(es, sketches.labels, c));
    image_means.push_back(mean_embedding(ei, images.labels, c));
  }
  Matrix sim(categories.size(), categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i)
    for (std::size_t j = 0; j < categories.size(); ++j) sim(i, j) = cosine(sketch_means[i], image_means[j]);
  return sim;
}

std::string similarity_matrix_csv(const Matrix& sim, std::span<const Label> categories) {
  std::ostringstream out;
  out << "sketch\\image";
  for (Label c : categories) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    out << categories[i];
    for (std::size_t j = 0; j < sim.cols(); ++j) out << ',' << fmt_exact(sim(i, j));
    out << '\n';
  }
  return out.str();
}

}  // namespace dsn
