#include "dsn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/io.hpp"

namespace dsn {

const char* to_string(Modality m) { return m == Modality::kImage ? "image" : "sketch"; }

Modality parse_modality(const std::string& text) {
  if (text == "image") return Modality::kImage;
  if (text == "sketch") return Modality::kSketch;
  throw Error(ErrorCode::kConfig, "unknown modality '" + text + "' (expected image or sketch)");
}

std::vector<Label> FeatureSet::categories() const {
  std::vector<Label> out(labels);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void FeatureSet::validate() const {
  if (labels.size() != features.rows()) {
    throw Error(ErrorCode::kCountMismatch,
                "feature set has " + std::to_string(features.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (!features.all_finite()) throw Error(ErrorCode::kNonFinite, "feature set has non-finite entries");
}

void SynthConfig::validate() const {
  if (n_categories < 1 || dim < 1 || samples_per_category < 1) {
    throw Error(ErrorCode::kInvalidArgument, "synth: counts must be >= 1");
  }
  if (!(category_spread > 0.0)) throw Error(ErrorCode::kInvalidArgument, "synth: category_spread must be > 0");
  if (!(image_noise > 0.0) || !(sketch_noise > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "synth: noise scales must be > 0");
  }
  if (sketch_noise < image_noise) {
    throw Error(ErrorCode::kInvalidArgument, "synth: sketch_noise must be >= image_noise");
  }
  if (!(domain_gap >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "synth: domain_gap must be >= 0");
}

namespace {

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.dim;
  const std::size_t n = cfg.n_categories * cfg.samples_per_category;

  Matrix means(cfg.n_categories, d);
  for (double& x : means.values()) x = cfg.category_spread * rng.normal();

  std::vector<double> gap(d);
  for (double& x : gap) x = rng.normal();
  const double gap_norm = norm(gap);
  for (double& x : gap) x = gap_norm > 0.0 ? x / gap_norm * cfg.domain_gap : 0.0;

  auto sample = [&](Modality modality, double noise, bool offset) {
    FeatureSet fs{Matrix(n, d), std::vector<Label>(n), modality};
    std::size_t r = 0;
    for (std::size_t c = 0; c < cfg.n_categories; ++c) {
      for (std::size_t s = 0; s < cfg.samples_per_category; ++s, ++r) {
        fs.labels[r] = static_cast<Label>(c);
        auto row = fs.features.row(r);
        for (std::size_t j = 0; j < d; ++j) {
          row[j] = to_f32(means(c, j) + (offset ? gap[j] : 0.0) + noise * rng.normal());
        }
      }
    }
    return fs;
  };

  SyntheticData out;
  out.image = sample(Modality::kImage, cfg.image_noise, false);
  out.sketch = sample(Modality::kSketch, cfg.sketch_noise, true);
  return out;
}

ZeroShotSplit make_zero_shot_split(std::span<const Label> category_ids, std::size_t n_unseen,
                                   Rng& rng) {
  std::vector<Label> ids(category_ids.begin(), category_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (n_unseen < 1 || n_unseen >= ids.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "n_unseen must be in [1, " + std::to_string(ids.size()) + ")");
  }
  rng.shuffle(ids);
  ZeroShotSplit split;
  split.unseen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_unseen));
  split.seen.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_unseen), ids.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  return split;
}

FeatureSet restrict(const FeatureSet& fs, std::span<const Label> categories) {
  const std::set<Label> keep(categories.begin(), categories.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fs.labels.size(); ++i) {
    if (keep.count(fs.labels[i])) rows.push_back(i);
  }
  FeatureSet out{gather_rows(fs.features, rows), {}, fs.modality};
  if (rows.empty()) out.features = Matrix(0, fs.dim());
  out.labels.reserve(rows.size());
  for (std::size_t i : rows) out.labels.push_back(fs.labels[i]);
  return out;
}

std::string encode_features(const FeatureSet& fs) {
  fs.validate();
  io::Writer w;
  w.put_bytes("DSNF");
  w.put<std::uint32_t>(kFeatureFileVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(fs.modality));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(fs.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(fs.dim()));
  for (double x : fs.features.values()) w.put<float>(static_cast<float>(x));
  for (Label y : fs.labels) w.put<std::uint32_t>(y);
  return w.bytes();
}

FeatureSet decode_features(const std::string& bytes) {
  io::Reader r(bytes);
  if (bytes.size() < 4 || r.get_bytes(4) != "DSNF") {
    throw Error(ErrorCode::kBadMagic, "bad magic: not a feature file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureFileVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "feature file version " + std::to_string(version) + " unsupported");
  }
  const auto modality = r.get<std::uint8_t>();
  if (modality > 1) throw Error(ErrorCode::kParse, "bad modality byte");
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  const std::size_t expected = std::size_t{n} * d * sizeof(float) + std::size_t{n} * sizeof(std::uint32_t);
  if (r.remaining() < expected) throw Error(ErrorCode::kTruncated, "truncated payload");
  if (r.remaining() > expected) {
    throw Error(ErrorCode::kCountMismatch, "payload longer than declared rows/labels");
  }
  FeatureSet fs{Matrix(n, d), std::vector<Label>(n), static_cast<Modality>(modality)};
  for (double& x : fs.features.values()) x = static_cast<double>(r.get<float>());
  for (Label& y : fs.labels) y = r.get<std::uint32_t>();
  fs.validate();
  return fs;
}

void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_features(fs));
}

FeatureSet load_features(const std::filesystem::path& path) {
  return decode_features(io::read_file(path));
}

FeatureSet import_csv(const std::filesystem::path& path, Modality modality) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() < 2) {
      throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ": need label and features");
    }
    const std::size_t row_dim = cells.size() - 1;
    if (dim == 0) dim = row_dim;
    if (row_dim != dim) {
      throw Error(ErrorCode::kCountMismatch, "csv line " + std::to_string(line_no) + ": expected " +
                                                 std::to_string(dim) + " features");
    }
    Label label = 0;
    const auto& lc = cells[0];
    auto [p, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (ec != std::errc() || p != lc.data() + lc.size()) {
      throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ": bad label '" + lc + "'");
    }
    labels.push_back(label);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cells[j], &used));
        if (used != cells[j].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ": bad value '" + cells[j] + "'");
      }
    }
  }
  FeatureSet fs{Matrix(labels.size(), dim, std::move(values)), std::move(labels), modality};
  fs.validate();
  return fs;
}

void save_split(const ZeroShotSplit& split, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "seen:";
  for (Label c : split.seen) out << ' ' << c;
  out << "\nunseen:";
  for (Label c : split.unseen) out << ' ' << c;
  out << '\n';
  io::write_file_atomic(path, out.str());
}

ZeroShotSplit load_split(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  ZeroShotSplit split;
  bool have_seen = false, have_unseen = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::vector<Label>* target = nullptr;
    if (key == "seen:") {
      target = &split.seen;
      have_seen = true;
    } else if (key == "unseen:") {
      target = &split.unseen;
      have_unseen = true;
    } else {
      throw Error(ErrorCode::kParse, "split file: unexpected line '" + line + "'");
    }
    for (Label c; ls >> c;) target->push_back(c);
    if (!ls.eof()) throw Error(ErrorCode::kParse, "split file: bad id in '" + line + "'");
  }
  if (!have_seen || !have_unseen) throw Error(ErrorCode::kParse, "split file: missing seen/unseen line");
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  std::vector<Label> both;
  std::set_intersection(split.seen.begin(), split.seen.end(), split.unseen.begin(),
                        split.unseen.end(), std::back_inserter(both));
  if (!both.empty()) throw Error(ErrorCode::kParse, "split file: seen and unseen overlap");
  return split;
}

}  // namespace dsn
