#include "sit/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sit/errors.hpp"

namespace sit {

GuidanceWeights RunConfig::weights() const {
  GuidanceWeights w;
  w.lambda1 = lambda1;
  w.lambda2 = lambda2;
  w.lambda3 = lambda3;
  w.lambda4 = lambda4;
  w.lambda5 = lambda5;
  w.lambda_mse = lambda_mse;
  w.lambda_s = lambda_s;
  w.lambda_i = lambda_i;
  w.tau = tau;
  w.lambda_id = lambda_id;
  return w;
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::string bool_str(bool b) { return b ? "on" : "off"; }

std::string num_str(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

#define STR_FIELD(name) \
  ConfigField{#name, "", [](RunConfig& c, const std::string& v) { c.name = v; }, \
              [](const RunConfig& c) { return c.name; }}
#define DBL_FIELD(name) \
  ConfigField{#name, "", \
              [](RunConfig& c, const std::string& v) { c.name = parse_double(#name, v); }, \
              [](const RunConfig& c) { return num_str(c.name); }}
#define INT_FIELD(name) \
  ConfigField{#name, "", \
              [](RunConfig& c, const std::string& v) { c.name = int(parse_int(#name, v)); }, \
              [](const RunConfig& c) { return std::to_string(c.name); }}
#define BOOL_FIELD(name) \
  ConfigField{#name, "", \
              [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
              [](const RunConfig& c) { return bool_str(c.name); }}

std::vector<ConfigField> make_fields() {
  std::vector<ConfigField> f = {
      STR_FIELD(src),
      STR_FIELD(target_text),
      STR_FIELD(source_text),
      STR_FIELD(target_image),
      STR_FIELD(out_dir),
      STR_FIELD(score_model),
      STR_FIELD(score_checkpoint),
      DBL_FIELD(analytic_mean),
      DBL_FIELD(analytic_std),
      STR_FIELD(extractor),
      STR_FIELD(extractor_cmd),
      STR_FIELD(embedder),
      STR_FIELD(embedder_cmd),
      INT_FIELD(toy_patch),
      INT_FIELD(t_train),
      DBL_FIELD(beta_min),
      DBL_FIELD(beta_max),
      STR_FIELD(variance_rule),
      INT_FIELD(sample_steps),
      INT_FIELD(skip_steps),
      INT_FIELD(n_resample),
      DBL_FIELD(lambda1),
      DBL_FIELD(lambda2),
      DBL_FIELD(lambda3),
      DBL_FIELD(lambda4),
      DBL_FIELD(lambda5),
      DBL_FIELD(lambda_mse),
      DBL_FIELD(lambda_s),
      DBL_FIELD(lambda_i),
      DBL_FIELD(tau),
      DBL_FIELD(lambda_id),
      INT_FIELD(m_aug),
      BOOL_FIELD(aug_identity_only),
      ConfigField{"seed", "",
                  [](RunConfig& c, const std::string& v) {
                    c.seed = std::uint64_t(parse_int("seed", v));
                  },
                  [](const RunConfig& c) { return std::to_string(c.seed); }},
      BOOL_FIELD(restart),
      DBL_FIELD(restart_threshold),
      INT_FIELD(max_restarts),
      BOOL_FIELD(full_gradient),
      INT_FIELD(snapshot_every),
      BOOL_FIELD(color_match),
      BOOL_FIELD(final_clamp),
  };
  return f;
}

#undef STR_FIELD
#undef DBL_FIELD
#undef INT_FIELD
#undef BOOL_FIELD

const ConfigField* find_field(const std::string& key) {
  for (const ConfigField& f : run_config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

const std::vector<ConfigField>& run_config_fields() {
  static const std::vector<ConfigField> fields = make_fields();
  return fields;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::map<std::string, std::string> pairs;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (find_field(key) == nullptr)
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    pairs[key] = value;
  }
  return pairs;
}

RunConfig resolve_config(const std::string& mode,
                         const std::map<std::string, std::string>& file_pairs,
                         const std::map<std::string, std::string>& cli_pairs) {
  if (mode != "text" && mode != "image") throw ConfigError("mode must be text or image");
  RunConfig cfg;
  cfg.mode = mode;
  if (mode == "image") {
    cfg.sample_steps = 200;
    cfg.skip_steps = 80;
  }
  for (const auto& layer : {file_pairs, cli_pairs}) {
    for (const auto& [key, value] : layer) {
      const ConfigField* f = find_field(key);
      if (!f) throw ConfigError("unknown config key '" + key + "'");
      f->set(cfg, value);
    }
  }
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  if (cfg.src.empty()) throw ConfigError("src: a source image path is required");
  if (cfg.mode == "text") {
    if (cfg.target_text.empty()) throw ConfigError("target_text: required in text mode");
    if (cfg.source_text.empty()) throw ConfigError("source_text: required in text mode");
  } else {
    if (cfg.target_image.empty()) throw ConfigError("target_image: required in image mode");
  }
  if (cfg.score_model != "toy" && cfg.score_model != "analytic")
    throw ConfigError("score_model: must be toy or analytic");
  if (cfg.score_model == "toy" && cfg.score_checkpoint.empty())
    throw ConfigError(
        "score_checkpoint: required when score_model=toy (train one with `sit train-toy`)");
  if (cfg.extractor != "toy" && cfg.extractor != "worker")
    throw ConfigError("extractor: must be toy or worker");
  if (cfg.extractor == "worker" && cfg.extractor_cmd.empty())
    throw ConfigError("extractor_cmd: required when extractor=worker");
  if (cfg.embedder != "toy" && cfg.embedder != "worker")
    throw ConfigError("embedder: must be toy or worker");
  if (cfg.embedder == "worker" && cfg.embedder_cmd.empty())
    throw ConfigError("embedder_cmd: required when embedder=worker");
  if (cfg.variance_rule != "beta" && cfg.variance_rule != "posterior")
    throw ConfigError("variance_rule: must be beta or posterior");
  if (cfg.t_train < 1) throw ConfigError("t_train: must be >= 1");
  if (!(cfg.beta_min > 0 && cfg.beta_min <= cfg.beta_max && cfg.beta_max < 1))
    throw ConfigError("beta_min/beta_max: need 0 < beta_min <= beta_max < 1");
  if (cfg.sample_steps < 1 || cfg.sample_steps > cfg.t_train)
    throw ConfigError("sample_steps: must be in [1, t_train]");
  if (cfg.skip_steps < 0 || cfg.skip_steps >= cfg.sample_steps)
    throw ConfigError("skip_steps: must be in [0, sample_steps)");
  if (cfg.n_resample < 0) throw ConfigError("n_resample: must be >= 0");
  if (cfg.n_resample > 0 && cfg.t_start() < 2)
    throw ConfigError("n_resample: resampling needs sample_steps - skip_steps >= 2");
  if (cfg.m_aug < 1) throw ConfigError("m_aug: must be >= 1");
  if (!(cfg.tau > 0)) throw ConfigError("tau: must be positive");
  if (!(cfg.restart_threshold > 0)) throw ConfigError("restart_threshold: must be positive");
  if (cfg.max_restarts < 0) throw ConfigError("max_restarts: must be >= 0");
  if (cfg.snapshot_every < 0) throw ConfigError("snapshot_every: must be >= 0");
  if (cfg.toy_patch < 1) throw ConfigError("toy_patch: must be >= 1");
  for (const char* key : {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "lambda_mse",
                          "lambda_id"}) {
    const ConfigField* f = find_field(key);
    if (parse_double(key, f->get(cfg)) < 0) throw ConfigError(std::string(key) + ": must be >= 0");
  }
}

std::filesystem::path resolve_checkpoint_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("SIT_CHECKPOINT_ROOT")) {
    std::filesystem::path rooted = std::filesystem::path(root) / p;
    if (std::filesystem::exists(rooted)) return rooted;
  }
  return p;
}

}  // namespace sit
