#include "dsn/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/format.hpp"
#include "dsn/io.hpp"

namespace dsn {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kDefault: return "default";
    case Provenance::kEnv: return "env";
    case Provenance::kFile: return "file";
    case Provenance::kFlag: return "flag";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw Error(ErrorCode::kConfig, "config key '" + key + "': expected " + want + ", got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return x;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true/false");
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DSN_SIZE_KEY(name, field)                                                              \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = parse_uint(name, v); },         \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define DSN_REAL_KEY(name, field)                                                              \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); },       \
      [](const RunConfig& c) { return fmt_short(c.field); }}
#define DSN_BOOL_KEY(name, field)                                                              \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); },         \
      [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      DSN_SIZE_KEY("seed", bench.train.seed),
      DSN_SIZE_KEY("seeds", seeds),
      DSN_REAL_KEY("tau", bench.train.tau),
      DSN_SIZE_KEY("k", bench.train.k),
      DSN_REAL_KEY("lambda1", bench.train.weights.lambda1),
      DSN_REAL_KEY("lambda2", bench.train.weights.lambda2),
      DSN_REAL_KEY("lambda3", bench.train.weights.lambda3),
      DSN_SIZE_KEY("batch_size", bench.train.batch_size),
      DSN_SIZE_KEY("epochs", bench.train.epochs),
      DSN_REAL_KEY("lr_initial", bench.train.lr_initial),
      DSN_REAL_KEY("lr_final", bench.train.lr_final),
      DSN_BOOL_KEY("use_cmcm", bench.train.use_cmcm),
      DSN_BOOL_KEY("use_ml", bench.train.use_ml),
      DSN_REAL_KEY("augment_strength", bench.train.augment_strength),
      DSN_REAL_KEY("clip_grad_norm", bench.train.clip_grad_norm),
      DSN_SIZE_KEY("hidden", bench.train.hidden),
      DSN_SIZE_KEY("embedding", bench.train.embedding),
      DSN_SIZE_KEY("proj_hidden", bench.train.proj_hidden),
      DSN_SIZE_KEY("teacher_classes", bench.train.teacher_classes),
      DSN_SIZE_KEY("n_categories", bench.synth.n_categories),
      DSN_SIZE_KEY("dim", bench.synth.dim),
      DSN_SIZE_KEY("samples_per_category", bench.synth.samples_per_category),
      DSN_REAL_KEY("category_spread", bench.synth.category_spread),
      DSN_REAL_KEY("domain_gap", bench.synth.domain_gap),
      DSN_REAL_KEY("image_noise", bench.synth.image_noise),
      DSN_REAL_KEY("sketch_noise", bench.synth.sketch_noise),
      DSN_SIZE_KEY("n_unseen", bench.n_unseen),
      DSN_SIZE_KEY("itq_bits", bench.itq_bits),
      DSN_SIZE_KEY("itq_iterations", bench.itq_iterations),
      Key{"metric", [](RunConfig& c, const std::string& v) { c.metric = parse_metric(v); },
          [](const RunConfig& c) { return std::string(to_string(c.metric)); }},
  };
  return table;
}

#undef DSN_SIZE_KEY
#undef DSN_REAL_KEY
#undef DSN_BOOL_KEY

const Key* find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void apply(RunConfig& cfg, const KeyValues& values, Provenance source) {
  for (const auto& [name, value] : values) {
    const Key* key = find_key(name);
    if (!key) {
      std::string msg = "unknown config key '" + name + "'";
      if (auto s = suggest_key(name)) msg += " (did you mean '" + *s + "'?)";
      throw Error(ErrorCode::kConfig, msg);
    }
    try {
      key->set(cfg, trim(value));
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, e.what());
    }
    cfg.provenance[name] = source;
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Key& k : keys()) out.push_back(k.name);
    return out;
  }();
  return names;
}

std::optional<std::string> suggest_key(const std::string& key) {
  std::optional<std::string> best;
  std::size_t best_d = 3;
  for (const Key& k : keys()) {
    const std::size_t d = edit_distance(key, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig load_config(const KeyValues& file_values, const KeyValues& flag_values,
                      const std::optional<std::string>& env_seed) {
  RunConfig cfg;
  for (const Key& k : keys()) cfg.provenance[k.name] = Provenance::kDefault;
  if (env_seed && !env_seed->empty()) apply(cfg, {{"seed", *env_seed}}, Provenance::kEnv);
  apply(cfg, file_values, Provenance::kFile);
  apply(cfg, flag_values, Provenance::kFlag);
  try {
    cfg.bench.train.validate();
    cfg.bench.synth.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  if (cfg.seeds < 1) throw Error(ErrorCode::kConfig, "config key 'seeds' must be >= 1");
  if (cfg.bench.itq_bits < 1) throw Error(ErrorCode::kConfig, "config key 'itq_bits' must be >= 1");
  return cfg;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file, const KeyValues& flag_values,
                      const std::optional<std::string>& env_seed) {
  KeyValues file_values;
  if (file) {
    try {
      file_values = parse_config_text(io::read_file(*file));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfig) throw;
      throw Error(ErrorCode::kConfig, std::string("cannot read config: ") + e.what());
    }
  }
  return load_config(file_values, flag_values, env_seed);
}

Metadata RunConfig::metadata() const {
  Metadata out;
  if (!command.empty()) out.emplace_back("command", command);
  for (const Key& k : keys()) {
    out.emplace_back(k.name, k.get(*this));
    out.emplace_back(k.name + ".source", to_string(provenance.at(k.name)));
  }
  return out;
}

}  // namespace dsn
