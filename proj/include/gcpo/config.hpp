#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcpo/advantage.hpp"
#include "gcpo/error.hpp"
#include "gcpo/rewards.hpp"
#include "gcpo/selection.hpp"

namespace gcpo::config {

using nlohmann::json;

enum class Method {
  kGcpo,            // critical-token mask + dynamic weights
  kGrpoFull,        // full mask, unit weights
  kGrpoRandomMask,  // random mask matched to the critical count, unit weights
  kGrpoOtherTokens, // complement of the critical mask, unit weights
};

struct TrainConfig {
  int grid_h = 6;
  int grid_w = 6;
  int vocab = 8;
  int embed_dim = 16;
  Method method = Method::kGcpo;
  int steps = 300;
  int group_size = 8;
  int inner_epochs = 1;
  int threads = 1;
  double learning_rate = 1e-3;
  double beta = 0.01;
  double clip_eps = 0.2;
  double eps_w = 0.5;
  advantage::WeightMode weight_mode = advantage::WeightMode::kOffset;
  bool kl_full_sequence = false;
  bool normalize_by_selected = false;
  double std_floor = 1e-6;
  double grad_norm_clip = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  selection::Budget budget;
  std::vector<rewards::Spec> prompts;  // one reward spec per prompt

  int seq_len() const { return grid_h * grid_w; }
  int num_prompts() const { return static_cast<int>(prompts.size()); }
};

// ---------------------------------------------------------------------------
// Enum <-> string
// ---------------------------------------------------------------------------

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kGcpo: return "gcpo";
    case Method::kGrpoFull: return "grpo_full";
    case Method::kGrpoRandomMask: return "grpo_random_mask";
    case Method::kGrpoOtherTokens: return "grpo_other_tokens";
  }
  return "gcpo";
}

inline Method method_from_string(const std::string& s, const std::string& path) {
  if (s == "gcpo") return Method::kGcpo;
  if (s == "grpo_full") return Method::kGrpoFull;
  if (s == "grpo_random_mask") return Method::kGrpoRandomMask;
  if (s == "grpo_other_tokens") return Method::kGrpoOtherTokens;
  throw ConfigError(path + ": unknown method '" + s +
                    "' (expected gcpo, grpo_full, grpo_random_mask, "
                    "grpo_other_tokens)");
}

inline std::string to_string(advantage::WeightMode m) {
  switch (m) {
    case advantage::WeightMode::kOffset: return "offset";
    case advantage::WeightMode::kLiteral: return "literal";
    case advantage::WeightMode::kAbs: return "abs";
    case advantage::WeightMode::kUnit: return "unit";
  }
  return "offset";
}

inline advantage::WeightMode weight_mode_from_string(const std::string& s,
                                                     const std::string& path) {
  if (s == "offset") return advantage::WeightMode::kOffset;
  if (s == "literal") return advantage::WeightMode::kLiteral;
  if (s == "abs") return advantage::WeightMode::kAbs;
  if (s == "unit") return advantage::WeightMode::kUnit;
  throw ConfigError(path + ": unknown weight_mode '" + s +
                    "' (expected offset, literal, abs, unit)");
}

// ---------------------------------------------------------------------------
// Reward spec <-> JSON
// ---------------------------------------------------------------------------

inline json to_json(const rewards::Spec& spec) {
  json j;
  switch (spec.kind) {
    case rewards::Kind::kCount:
      j["kind"] = "count";
      j["token"] = spec.count_token;
      j["target"] = spec.count_target;
      break;
    case rewards::Kind::kRegion:
      j["kind"] = "region";
      j["rect"] = {{"row", spec.regions[0].rect.row},
                   {"col", spec.regions[0].rect.col},
                   {"rows", spec.regions[0].rect.rows},
                   {"cols", spec.regions[0].rect.cols}};
      j["token"] = spec.regions[0].token;
      break;
    case rewards::Kind::kTwoRegion: {
      j["kind"] = "two_region";
      json regions = json::array();
      for (const auto& r : spec.regions) {
        regions.push_back({{"rect",
                            {{"row", r.rect.row},
                             {"col", r.rect.col},
                             {"rows", r.rect.rows},
                             {"cols", r.rect.cols}}},
                           {"token", r.token}});
      }
      j["regions"] = std::move(regions);
      break;
    }
    case rewards::Kind::kBorderStructure:
      j["kind"] = "border_structure";
      j["border_token"] = spec.border_token;
      j["interior_token"] = spec.interior_token;
      break;
  }
  return j;
}

namespace detail {

inline int require_int(const json& j, const std::string& key,
                       const std::string& path) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw ConfigError(path + "." + key + ": expected integer");
  }
  return j[key].get<int>();
}

inline void require_keys(const json& j, std::initializer_list<const char*> keys,
                         const std::string& path) {
  for (auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ConfigError("unknown config key: " + path + "." + key);
  }
}

inline rewards::Rect parse_rect(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected object");
  require_keys(j, {"row", "col", "rows", "cols"}, path);
  rewards::Rect r;
  r.row = require_int(j, "row", path);
  r.col = require_int(j, "col", path);
  r.rows = require_int(j, "rows", path);
  r.cols = require_int(j, "cols", path);
  return r;
}

}  // namespace detail

inline rewards::Spec parse_reward(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError(path + ": expected object with string field 'kind'");
  }
  const std::string kind = j["kind"].get<std::string>();
  rewards::Spec spec;
  if (kind == "count") {
    detail::require_keys(j, {"kind", "token", "target"}, path);
    spec.kind = rewards::Kind::kCount;
    spec.count_token = detail::require_int(j, "token", path);
    spec.count_target = detail::require_int(j, "target", path);
  } else if (kind == "region") {
    detail::require_keys(j, {"kind", "rect", "token"}, path);
    spec.kind = rewards::Kind::kRegion;
    if (!j.contains("rect")) throw ConfigError(path + ".rect: missing");
    spec.regions.push_back({detail::parse_rect(j["rect"], path + ".rect"),
                            detail::require_int(j, "token", path)});
  } else if (kind == "two_region") {
    detail::require_keys(j, {"kind", "regions"}, path);
    spec.kind = rewards::Kind::kTwoRegion;
    if (!j.contains("regions") || !j["regions"].is_array() ||
        j["regions"].size() != 2) {
      throw ConfigError(path + ".regions: expected array of 2 entries");
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const json& r = j["regions"][i];
      const std::string rp = path + ".regions[" + std::to_string(i) + "]";
      if (!r.is_object()) throw ConfigError(rp + ": expected object");
      detail::require_keys(r, {"rect", "token"}, rp);
      if (!r.contains("rect")) throw ConfigError(rp + ".rect: missing");
      spec.regions.push_back({detail::parse_rect(r["rect"], rp + ".rect"),
                              detail::require_int(r, "token", rp)});
    }
  } else if (kind == "border_structure") {
    detail::require_keys(j, {"kind", "border_token", "interior_token"}, path);
    spec.kind = rewards::Kind::kBorderStructure;
    spec.border_token = detail::require_int(j, "border_token", path);
    spec.interior_token = detail::require_int(j, "interior_token", path);
  } else {
    throw ConfigError(path + ".kind: unknown reward kind '" + kind + "'");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// TrainConfig <-> JSON
// ---------------------------------------------------------------------------

inline json to_json(const TrainConfig& cfg) {
  json prompts = json::array();
  for (const auto& spec : cfg.prompts) prompts.push_back(to_json(spec));
  return json{
      {"grid", {{"h", cfg.grid_h}, {"w", cfg.grid_w}}},
      {"vocab", cfg.vocab},
      {"embed_dim", cfg.embed_dim},
      {"method", to_string(cfg.method)},
      {"steps", cfg.steps},
      {"group_size", cfg.group_size},
      {"inner_epochs", cfg.inner_epochs},
      {"threads", cfg.threads},
      {"learning_rate", cfg.learning_rate},
      {"beta", cfg.beta},
      {"clip_eps", cfg.clip_eps},
      {"eps_w", cfg.eps_w},
      {"weight_mode", to_string(cfg.weight_mode)},
      {"kl_full_sequence", cfg.kl_full_sequence},
      {"normalize_by_selected", cfg.normalize_by_selected},
      {"std_floor", cfg.std_floor},
      {"grad_norm_clip", cfg.grad_norm_clip},
      {"temperature", cfg.temperature},
      {"seed", cfg.seed},
      {"selection",
       {{"init_fraction", cfg.budget.init_fraction},
        {"struct_fraction", cfg.budget.struct_fraction},
        {"sim_fraction", cfg.budget.sim_fraction}}},
      {"prompts", std::move(prompts)},
  };
}

inline TrainConfig default_config() {
  TrainConfig cfg;
  rewards::Spec p0;
  p0.kind = rewards::Kind::kBorderStructure;
  p0.border_token = 1;
  p0.interior_token = 2;
  rewards::Spec p1;
  p1.kind = rewards::Kind::kBorderStructure;
  p1.border_token = 3;
  p1.interior_token = 4;
  cfg.prompts = {p0, p1};
  return cfg;
}

namespace detail {

// Strict deep merge of a user document onto the defaults: every user key must
// exist in the schema and carry a compatible JSON type. `prompts` is replaced
// wholesale and validated during struct conversion.
inline void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError((path.empty() ? std::string("config") : path) +
                      ": expected object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    // Resolved run configs carry their own hash; accept and regenerate it.
    if (key == "config_hash" && path.empty()) continue;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + p);
    json& slot = base[key];
    if (key == "prompts" && path.empty()) {
      if (!value.is_array() || value.empty()) {
        throw ConfigError("prompts: expected non-empty array");
      }
      slot = value;
    } else if (slot.is_object()) {
      merge_strict(slot, value, p);
    } else if (slot.is_string()) {
      if (!value.is_string()) throw ConfigError(p + ": expected string");
      slot = value;
    } else if (slot.is_boolean()) {
      if (!value.is_boolean()) throw ConfigError(p + ": expected boolean");
      slot = value;
    } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
      if (!value.is_number_integer() && !value.is_number_unsigned()) {
        throw ConfigError(p + ": expected integer");
      }
      slot = value;
    } else if (slot.is_number_float()) {
      if (!value.is_number()) throw ConfigError(p + ": expected number");
      slot = value;
    } else {
      slot = value;
    }
  }
}

inline void check_range(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace detail

/// Parse a user config document: defaults filled in, unknown keys rejected,
/// every field range-checked. Throws ConfigError with the dotted field path.
inline TrainConfig parse_config(const json& user) {
  json doc = to_json(default_config());
  detail::merge_strict(doc, user, "");

  TrainConfig cfg;
  cfg.grid_h = doc["grid"]["h"].get<int>();
  cfg.grid_w = doc["grid"]["w"].get<int>();
  cfg.vocab = doc["vocab"].get<int>();
  cfg.embed_dim = doc["embed_dim"].get<int>();
  cfg.method = method_from_string(doc["method"].get<std::string>(), "method");
  cfg.steps = doc["steps"].get<int>();
  cfg.group_size = doc["group_size"].get<int>();
  cfg.inner_epochs = doc["inner_epochs"].get<int>();
  cfg.threads = doc["threads"].get<int>();
  cfg.learning_rate = doc["learning_rate"].get<double>();
  cfg.beta = doc["beta"].get<double>();
  cfg.clip_eps = doc["clip_eps"].get<double>();
  cfg.eps_w = doc["eps_w"].get<double>();
  cfg.weight_mode =
      weight_mode_from_string(doc["weight_mode"].get<std::string>(), "weight_mode");
  cfg.kl_full_sequence = doc["kl_full_sequence"].get<bool>();
  cfg.normalize_by_selected = doc["normalize_by_selected"].get<bool>();
  cfg.std_floor = doc["std_floor"].get<double>();
  cfg.grad_norm_clip = doc["grad_norm_clip"].get<double>();
  cfg.temperature = doc["temperature"].get<double>();
  if (doc["seed"].get<double>() < 0) throw ConfigError("seed: must be >= 0");
  cfg.seed = doc["seed"].get<std::uint64_t>();
  cfg.budget.init_fraction = doc["selection"]["init_fraction"].get<double>();
  cfg.budget.struct_fraction = doc["selection"]["struct_fraction"].get<double>();
  cfg.budget.sim_fraction = doc["selection"]["sim_fraction"].get<double>();

  cfg.prompts.clear();
  for (std::size_t i = 0; i < doc["prompts"].size(); ++i) {
    cfg.prompts.push_back(parse_reward(doc["prompts"][i],
                                       "prompts[" + std::to_string(i) + "]"));
  }

  using detail::check_range;
  check_range(cfg.grid_h >= 2 && cfg.grid_w >= 2,
              "grid: need h >= 2 and w >= 2 for spatial gradients");
  check_range(cfg.vocab >= 2, "vocab: must be >= 2");
  check_range(cfg.embed_dim >= 2, "embed_dim: must be >= 2");
  check_range(cfg.steps >= 1, "steps: must be >= 1");
  check_range(cfg.group_size >= 2, "group_size: must be >= 2");
  check_range(cfg.inner_epochs >= 1, "inner_epochs: must be >= 1");
  check_range(cfg.threads >= 1, "threads: must be >= 1");
  check_range(cfg.learning_rate > 0, "learning_rate: must be > 0");
  check_range(cfg.beta >= 0 && std::isfinite(cfg.beta), "beta: must be >= 0");
  check_range(cfg.clip_eps > 0 && cfg.clip_eps < 1,
              "clip_eps: must lie in (0, 1)");
  check_range(cfg.eps_w > 0, "eps_w: must be > 0");
  check_range(cfg.std_floor > 0, "std_floor: must be > 0");
  check_range(cfg.grad_norm_clip > 0, "grad_norm_clip: must be > 0");
  check_range(cfg.temperature > 0, "temperature: must be > 0");
  auto frac_ok = [](double f) { return f >= 0.0 && f <= 1.0; };
  check_range(frac_ok(cfg.budget.init_fraction),
              "selection.init_fraction: must lie in [0, 1]");
  check_range(frac_ok(cfg.budget.struct_fraction),
              "selection.struct_fraction: must lie in [0, 1]");
  check_range(frac_ok(cfg.budget.sim_fraction),
              "selection.sim_fraction: must lie in [0, 1]");
  check_range(!cfg.prompts.empty(), "prompts: must not be empty");

  for (std::size_t i = 0; i < cfg.prompts.size(); ++i) {
    try {
      rewards::validate(cfg.prompts[i], cfg.grid_h, cfg.grid_w, cfg.vocab);
    } catch (const ValidationError& e) {
      throw ConfigError("prompts[" + std::to_string(i) + "]: " + e.what());
    }
  }
  return cfg;
}

/// Apply one `--set dotted.key=value` override onto a user document. The value
/// is parsed as a JSON literal when possible and falls back to a raw string.
inline void apply_override(json& doc, const std::string& dotted_key,
                           const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("override: empty key");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* slot = &doc;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', begin);
    const std::string part = dotted_key.substr(
        begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (part.empty()) throw ConfigError("override: malformed key " + dotted_key);
    if (dot == std::string::npos) {
      (*slot)[part] = std::move(parsed);
      return;
    }
    slot = &(*slot)[part];
    begin = dot + 1;
  }
}

/// FNV-1a hash of the canonical dump; stamps a run with its exact settings.
inline std::string config_hash(const json& resolved) {
  const std::string dump = resolved.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
}

}  // namespace gcpo::config
