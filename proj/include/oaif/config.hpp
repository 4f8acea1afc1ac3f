#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "oaif/annotate.hpp"
#include "oaif/remote.hpp"
#include "oaif/trainer.hpp"

namespace oaif {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyConfig {
  int vocab_size = 32;
  int order = 2;
  std::int64_t features = 4096;
  int max_len = 32;
  int prompt_cap = 16;
};

enum class AnnotatorSource { kOracle, kRemote };

struct AnnotatorConfig {
  AnnotatorSource source = AnnotatorSource::kOracle;
  OracleSpec oracle;
  RemoteConfig remote;
  std::string template_name = "helpfulness";
  std::string template_dir = "templates";
  std::string cache_path;  // empty disables the disk cache
};

struct PromptSetConfig {
  int count = 64;
  std::string file;  // JSONL of {"ids": [...]}; overrides synthetic generation
};

struct EvalSection {
  double temperature = 0.9;
  int prompts = 200;
  double tie_epsilon = 0.02;
};

struct ExperimentConfig {
  std::string preset = "desk";
  PolicyConfig policy;
  TrainingConfig train;
  AnnotatorConfig annotator;
  PromptSetConfig prompts;
  EvalSection eval;
  std::string output_dir = "out";

  void validate() const {
    train.validate();
    annotator.oracle.validate();
    if (policy.vocab_size < 2 || policy.vocab_size > 256) {
      throw ConfigError("policy.vocab: must be in [2, 256]");
    }
    if (policy.order < 1) throw ConfigError("policy.order: must be >= 1");
    if (policy.features < 1) throw ConfigError("policy.features: must be >= 1");
    if (policy.max_len < 1) throw ConfigError("policy.max_len: must be >= 1");
    if (policy.prompt_cap < 1) throw ConfigError("policy.prompt_cap: must be >= 1");
    if (annotator.source == AnnotatorSource::kRemote && annotator.remote.endpoint.empty()) {
      throw ConfigError("annotator.endpoint: required for the remote annotator");
    }
    if (annotator.oracle.target_symbol < 0 ||
        annotator.oracle.target_symbol >= policy.vocab_size) {
      throw ConfigError("annotator.target_symbol: out of vocab range");
    }
    if (prompts.count < 1 && prompts.file.empty()) {
      throw ConfigError("prompts.count: must be >= 1");
    }
  }
};

/// The paper-scale hyperparameters, kept as a named preset.
inline ExperimentConfig paper_preset() {
  ExperimentConfig cfg;
  cfg.preset = "paper";
  cfg.train.loss = LossKind(LossVariant::kDpo, 0.1);
  cfg.train.learning_rate = 5e-7;
  cfg.train.warmup_steps = 150;
  cfg.train.batch_size = 128;
  cfg.train.temperature = 0.9;
  cfg.train.max_steps = 2000;
  return cfg;
}

/// Minute-scale runs on the desk-sized policy.
inline ExperimentConfig desk_preset() {
  ExperimentConfig cfg;
  cfg.preset = "desk";
  cfg.train.loss = LossKind(LossVariant::kDpo, 0.1);
  cfg.train.learning_rate = 0.05;
  cfg.train.warmup_steps = 20;
  cfg.train.batch_size = 32;
  cfg.train.temperature = 0.9;
  cfg.train.max_steps = 500;
  return cfg;
}

inline ExperimentConfig preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset: " + name);
}

// ---- flat-section key-value file format ----

using IniData = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline IniData parse_ini(std::istream& in) {
  IniData data;
  std::string section = "";
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: malformed line: " + t);
    }
    data[section][trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return data;
}

template <typename T>
T parse_number(const std::string& section, const std::string& key,
               const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) {
    throw ConfigError("config: " + section + "." + key + ": bad value '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& section, const std::string& key,
                       const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: " + section + "." + key + ": bad boolean '" + value + "'");
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace detail

inline ExperimentConfig config_from_ini(const IniData& data) {
  // Keys not present in the file keep the defaults of the named preset.
  ExperimentConfig cfg;
  if (auto sec = data.find("experiment"); sec != data.end()) {
    if (auto it = sec->second.find("preset"); it != sec->second.end()) {
      cfg = preset_by_name(it->second);
    }
  }
  for (const auto& [section, entries] : data) {
    for (const auto& [key, value] : entries) {
      auto num = [&](auto tag) { return detail::parse_number<decltype(tag)>(section, key, value); };
      if (section == "experiment") {
        if (key == "preset") cfg.preset = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else throw ConfigError("config: unknown key experiment." + key);
      } else if (section == "policy") {
        if (key == "vocab") cfg.policy.vocab_size = num(int{});
        else if (key == "order") cfg.policy.order = num(int{});
        else if (key == "features") cfg.policy.features = num(std::int64_t{});
        else if (key == "max_len") cfg.policy.max_len = num(int{});
        else if (key == "prompt_cap") cfg.policy.prompt_cap = num(int{});
        else throw ConfigError("config: unknown key policy." + key);
      } else if (section == "train") {
        if (key == "loss") cfg.train.loss.variant = loss_from_name(value);
        else if (key == "beta") cfg.train.loss.beta = num(double{});
        else if (key == "learning_rate") cfg.train.learning_rate = num(double{});
        else if (key == "warmup_steps") cfg.train.warmup_steps = num(int{});
        else if (key == "batch_size") cfg.train.batch_size = num(int{});
        else if (key == "temperature") cfg.train.temperature = num(double{});
        else if (key == "max_steps") cfg.train.max_steps = num(int{});
        else if (key == "tie_epsilon") cfg.train.tie_epsilon = num(double{});
        else if (key == "resample_attempts") cfg.train.resample_attempts = num(int{});
        else if (key == "seed") cfg.train.seed = num(std::uint64_t{});
        else if (key == "eval_every") cfg.train.eval_every = num(int{});
        else throw ConfigError("config: unknown key train." + key);
      } else if (section == "annotator") {
        if (key == "kind") {
          if (value == "oracle") cfg.annotator.source = AnnotatorSource::kOracle;
          else if (value == "remote") cfg.annotator.source = AnnotatorSource::kRemote;
          else throw ConfigError("config: annotator.kind must be oracle or remote");
        } else if (key == "oracle_kind") {
          if (value == "bradley_terry") cfg.annotator.oracle.kind = OracleKind::kBradleyTerry;
          else if (value == "deterministic_argmax")
            cfg.annotator.oracle.kind = OracleKind::kDeterministicArgmax;
          else throw ConfigError("config: unknown oracle_kind " + value);
        } else if (key == "reward") cfg.annotator.oracle.reward = reward_from_name(value);
        else if (key == "target_symbol") cfg.annotator.oracle.target_symbol = num(int{});
        else if (key == "length_penalty") cfg.annotator.oracle.length_penalty = num(double{});
        else if (key == "noise") cfg.annotator.oracle.noise = num(double{});
        else if (key == "position_bias") cfg.annotator.oracle.position_bias = num(double{});
        else if (key == "oracle_seed") cfg.annotator.oracle.seed = num(std::uint64_t{});
        else if (key == "endpoint") cfg.annotator.remote.endpoint = value;
        else if (key == "auth_token") cfg.annotator.remote.auth_token = value;
        else if (key == "parallelism") cfg.annotator.remote.parallelism = num(int{});
        else if (key == "timeout_ms") cfg.annotator.remote.timeout_ms = num(int{});
        else if (key == "max_retries") cfg.annotator.remote.max_retries = num(int{});
        else if (key == "template") cfg.annotator.template_name = value;
        else if (key == "template_dir") cfg.annotator.template_dir = value;
        else if (key == "cache") cfg.annotator.cache_path = value;
        else throw ConfigError("config: unknown key annotator." + key);
      } else if (section == "prompts") {
        if (key == "count") cfg.prompts.count = num(int{});
        else if (key == "file") cfg.prompts.file = value;
        else throw ConfigError("config: unknown key prompts." + key);
      } else if (section == "eval") {
        if (key == "temperature") cfg.eval.temperature = num(double{});
        else if (key == "prompts") cfg.eval.prompts = num(int{});
        else if (key == "tie_epsilon") cfg.eval.tie_epsilon = num(double{});
        else throw ConfigError("config: unknown key eval." + key);
      } else {
        throw ConfigError("config: unknown section [" + section + "]");
      }
    }
  }
  return cfg;
}

/// Canonical serialization: fixed section and key order, full-precision
/// doubles, so a resolved snapshot reruns bit-for-bit.
inline std::string config_to_ini(const ExperimentConfig& cfg) {
  using detail::format_double;
  std::ostringstream out;
  out << "[experiment]\n";
  out << "preset = " << cfg.preset << "\n";
  out << "output_dir = " << cfg.output_dir << "\n";
  out << "\n[policy]\n";
  out << "vocab = " << cfg.policy.vocab_size << "\n";
  out << "order = " << cfg.policy.order << "\n";
  out << "features = " << cfg.policy.features << "\n";
  out << "max_len = " << cfg.policy.max_len << "\n";
  out << "prompt_cap = " << cfg.policy.prompt_cap << "\n";
  out << "\n[train]\n";
  out << "loss = " << loss_name(cfg.train.loss.variant) << "\n";
  out << "beta = " << format_double(cfg.train.loss.beta) << "\n";
  out << "learning_rate = " << format_double(cfg.train.learning_rate) << "\n";
  out << "warmup_steps = " << cfg.train.warmup_steps << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "temperature = " << format_double(cfg.train.temperature) << "\n";
  out << "max_steps = " << cfg.train.max_steps << "\n";
  out << "tie_epsilon = " << format_double(cfg.train.tie_epsilon) << "\n";
  out << "resample_attempts = " << cfg.train.resample_attempts << "\n";
  out << "seed = " << cfg.train.seed << "\n";
  out << "eval_every = " << cfg.train.eval_every << "\n";
  out << "\n[annotator]\n";
  out << "kind = "
      << (cfg.annotator.source == AnnotatorSource::kOracle ? "oracle" : "remote") << "\n";
  out << "oracle_kind = "
      << (cfg.annotator.oracle.kind == OracleKind::kBradleyTerry ? "bradley_terry"
                                                                 : "deterministic_argmax")
      << "\n";
  out << "reward = " << reward_name(cfg.annotator.oracle.reward) << "\n";
  out << "target_symbol = " << cfg.annotator.oracle.target_symbol << "\n";
  out << "length_penalty = " << format_double(cfg.annotator.oracle.length_penalty) << "\n";
  out << "noise = " << format_double(cfg.annotator.oracle.noise) << "\n";
  out << "position_bias = " << format_double(cfg.annotator.oracle.position_bias) << "\n";
  out << "oracle_seed = " << cfg.annotator.oracle.seed << "\n";
  if (!cfg.annotator.remote.endpoint.empty()) {
    out << "endpoint = " << cfg.annotator.remote.endpoint << "\n";
  }
  out << "parallelism = " << cfg.annotator.remote.parallelism << "\n";
  out << "timeout_ms = " << cfg.annotator.remote.timeout_ms << "\n";
  out << "max_retries = " << cfg.annotator.remote.max_retries << "\n";
  out << "template = " << cfg.annotator.template_name << "\n";
  out << "template_dir = " << cfg.annotator.template_dir << "\n";
  if (!cfg.annotator.cache_path.empty()) {
    out << "cache = " << cfg.annotator.cache_path << "\n";
  }
  out << "\n[prompts]\n";
  out << "count = " << cfg.prompts.count << "\n";
  if (!cfg.prompts.file.empty()) out << "file = " << cfg.prompts.file << "\n";
  out << "\n[eval]\n";
  out << "temperature = " << format_double(cfg.eval.temperature) << "\n";
  out << "prompts = " << cfg.eval.prompts << "\n";
  out << "tie_epsilon = " << format_double(cfg.eval.tie_epsilon) << "\n";
  return out.str();
}

/// Loads a config file; missing keys keep the defaults of `base` (normally a
/// preset). Secrets come from the environment, never from the file.
inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return config_from_ini(detail::parse_ini(in));
}

inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* endpoint = std::getenv("OAIF_ENDPOINT")) {
    cfg.annotator.remote.endpoint = endpoint;
  }
  if (const char* token = std::getenv("OAIF_TOKEN")) {
    cfg.annotator.remote.auth_token = token;
  }
}

/// Synthetic prompt set: lengths uniform in [1, prompt_cap], ids uniform over
/// the non-EOS vocabulary, derived deterministically from the run seed.
inline std::vector<TokenSeq> make_prompt_set(const PolicyConfig& policy, int count,
                                             std::uint64_t seed) {
  if (count < 1) throw ConfigError("prompt set: count must be >= 1");
  std::mt19937_64 rng(detail::split_seed(seed, 0x9121ULL));
  std::vector<TokenSeq> prompts;
  prompts.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int len = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(policy.prompt_cap));
    std::vector<TokenId> ids(len);
    for (int t = 0; t < len; ++t) {
      ids[t] = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(policy.vocab_size - 1));
    }
    prompts.push_back(make_prompt(std::move(ids)));
  }
  return prompts;
}

inline std::vector<TokenSeq> load_prompt_file(const std::string& path,
                                              const Vocab& vocab, int prompt_cap) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file: " + path);
  std::vector<TokenSeq> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    TokenSeq p = make_prompt(j.at("ids").get<std::vector<TokenId>>());
    p.validate(vocab);
    if (p.size() > static_cast<std::size_t>(prompt_cap)) {
      throw ConfigError("prompt file: prompt longer than prompt_cap");
    }
    prompts.push_back(std::move(p));
  }
  if (prompts.empty()) throw ConfigError("prompt file: no prompts in " + path);
  return prompts;
}

}  // namespace oaif
