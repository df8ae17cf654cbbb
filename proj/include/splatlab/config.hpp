#pragma once

#include "splatlab/trainer.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace splatlab {

/// A scalar from a flat key = value file (TOML scalar subset).
using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

/// Unknown key or ill-typed value in a configuration source.
class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline const char* type_name(const ConfigValue& v) {
  switch (v.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "float";
    default: return "string";
  }
}

}  // namespace detail

/// Parses one scalar: true/false, integers (underscores allowed), floats
/// (including inf/nan), or a double-quoted string.
inline ConfigValue parse_config_value(const std::string& raw) {
  const std::string s = detail::trim(raw);
  if (s.empty()) throw ConfigError("empty value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  std::string digits;
  for (char c : s) {
    if (c != '_') digits.push_back(c);
  }
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
  if (ei == std::errc() && pi == digits.data() + digits.size()) return i;
  const std::string body = (digits[0] == '+') ? digits.substr(1) : digits;
  double d = 0.0;
  auto [pd, ed] = std::from_chars(body.data(), body.data() + body.size(), d);
  if (ed == std::errc() && pd == body.data() + body.size()) return d;
  throw ConfigError("cannot parse value '" + s + "'");
}

/// Ordered key/value pairs as they appear in a file.
using ConfigEntries = std::vector<std::pair<std::string, ConfigValue>>;

inline ConfigEntries parse_config_text(const std::string& text) {
  ConfigEntries out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = detail::trim(detail::strip_comment(line));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    try {
      out.emplace_back(key, parse_config_value(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  return out;
}

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<void(TrainConfig&, const ConfigValue&)> set;
  std::function<std::string(const TrainConfig&)> get;
  std::function<bool(const TrainConfig&)> active;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double as_double(const std::string& key, const ConfigValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw ConfigError("key " + key + ": expected a number, got " + type_name(v));
}

inline std::int64_t as_int(const std::string& key, const ConfigValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw ConfigError("key " + key + ": expected an integer, got " + type_name(v));
}

inline bool as_bool(const std::string& key, const ConfigValue& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  throw ConfigError("key " + key + ": expected true or false, got " + type_name(v));
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto always = [](const TrainConfig&) { return true; };
    auto lfcf_on = [](const TrainConfig& c) { return c.lfcf; };
    auto real = [&](std::string name, auto member, std::function<bool(const TrainConfig&)> active) {
      k.push_back({name,
                   [name, member](TrainConfig& c, const ConfigValue& v) { member(c) = as_double(name, v); },
                   [member](const TrainConfig& c) { return format_double(member(c)); },
                   active});
    };
    auto integer = [&](std::string name, auto member, std::function<bool(const TrainConfig&)> active) {
      k.push_back({name,
                   [name, member](TrainConfig& c, const ConfigValue& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     const std::int64_t x = as_int(name, v);
                     if constexpr (std::is_unsigned_v<T>) {
                       if (x < 0) throw ConfigError("key " + name + ": must be non-negative");
                     }
                     member(c) = static_cast<T>(x);
                   },
                   [member](const TrainConfig& c) {
                     return std::to_string(member(c));
                   },
                   active});
    };
    auto boolean = [&](std::string name, auto member, std::function<bool(const TrainConfig&)> active) {
      k.push_back({name,
                   [name, member](TrainConfig& c, const ConfigValue& v) { member(c) = as_bool(name, v); },
                   [member](const TrainConfig& c) {
                     return std::string(member(c) ? "true" : "false");
                   },
                   active});
    };
    integer("iterations", [](auto& c) -> auto& { return c.iterations; }, always);
    integer("densify_from", [](auto& c) -> auto& { return c.densify_from; }, always);
    k.push_back({"densify_until",
                 [](TrainConfig& c, const ConfigValue& v) {
                   c.densify_until = static_cast<int>(as_int("densify_until", v));
                 },
                 [](const TrainConfig& c) { return std::to_string(c.resolved_densify_until()); },
                 always});
    integer("densify_interval", [](auto& c) -> auto& { return c.densify_interval; }, always);
    real("densify_grad_threshold", [](auto& c) -> auto& { return c.densify_grad_threshold; }, always);
    real("opacity_prune", [](auto& c) -> auto& { return c.opacity_prune; }, always);
    real("percent_dense", [](auto& c) -> auto& { return c.percent_dense; }, always);
    integer("max_gaussians", [](auto& c) -> auto& { return c.max_gaussians; }, always);
    real("lr_position", [](auto& c) -> auto& { return c.lr_position; }, always);
    real("lr_position_final", [](auto& c) -> auto& { return c.lr_position_final; }, always);
    real("lr_color", [](auto& c) -> auto& { return c.lr_color; }, always);
    real("lr_sh", [](auto& c) -> auto& { return c.lr_sh; }, always);
    real("lr_opacity", [](auto& c) -> auto& { return c.lr_opacity; }, always);
    real("lr_scale", [](auto& c) -> auto& { return c.lr_scale; }, always);
    real("lr_rotation", [](auto& c) -> auto& { return c.lr_rotation; }, always);
    real("ssim_weight", [](auto& c) -> auto& { return c.ssim_weight; }, always);
    integer("seed", [](auto& c) -> auto& { return c.seed; }, always);
    integer("sh_degree", [](auto& c) -> auto& { return c.sh_degree; }, always);
    integer("threads", [](auto& c) -> auto& { return c.threads; },
            [](const TrainConfig&) { return false; });
    boolean("lowpass_baseline", [](auto& c) -> auto& { return c.lowpass_baseline; }, always);
    real("lowpass_kappa", [](auto& c) -> auto& { return c.lowpass_kappa; },
         [](const TrainConfig& c) { return c.lowpass_baseline; });
    boolean("lfcf", [](auto& c) -> auto& { return c.lfcf; }, always);
    real("tau", [](auto& c) -> auto& { return c.lfcf_config.tau; }, lfcf_on);
    real("epsilon", [](auto& c) -> auto& { return c.lfcf_config.epsilon; }, lfcf_on);
    real("c_max", [](auto& c) -> auto& { return c.lfcf_config.c_max; }, lfcf_on);
    real("c_min", [](auto& c) -> auto& { return c.lfcf_config.c_min; }, lfcf_on);
    real("c_end", [](auto& c) -> auto& { return c.lfcf_config.c_end; }, lfcf_on);
    integer("r", [](auto& c) -> auto& { return c.lfcf_config.r; }, lfcf_on);
    real("anneal_n", [](auto& c) -> auto& { return c.lfcf_config.anneal_n; }, lfcf_on);
    boolean("literal_anneal", [](auto& c) -> auto& { return c.lfcf_config.literal_anneal; }, lfcf_on);
    boolean("strategy_depth", [](auto& c) -> auto& { return c.lfcf_config.strategies.depth; }, lfcf_on);
    boolean("strategy_scale", [](auto& c) -> auto& { return c.lfcf_config.strategies.scale; }, lfcf_on);
    boolean("strategy_cadence", [](auto& c) -> auto& { return c.lfcf_config.strategies.cadence; }, lfcf_on);
    boolean("strategy_anneal", [](auto& c) -> auto& { return c.lfcf_config.strategies.anneal; }, lfcf_on);
    boolean("strategy_probabilistic",
            [](auto& c) -> auto& { return c.lfcf_config.strategies.probabilistic; }, lfcf_on);
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Every recognised configuration key, in canonical order.
inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(k.name);
  return out;
}

/// Applies entries in order. All unknown keys are reported together.
inline void apply_config(TrainConfig& cfg, const ConfigEntries& entries) {
  std::map<std::string, const detail::ConfigKey*> index;
  for (const auto& k : detail::config_keys()) index[k.name] = &k;
  std::vector<std::string> unknown;
  for (const auto& [key, _] : entries) {
    if (!index.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
  for (const auto& [key, value] : entries) index.at(key)->set(cfg, value);
}

inline TrainConfig load_config_text(const std::string& text, TrainConfig base = {}) {
  apply_config(base, parse_config_text(text));
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str(), std::move(base));
}

/// Flag spelling of a key: c_max -> c-max.
inline std::string config_flag_name(const std::string& key) {
  std::string out = key;
  for (auto& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

/// Canonical text of the settings that influence training. Keys of disabled
/// features and the thread count are omitted, so they do not change the hash.
inline std::string canonical_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    if (!k.active(cfg)) continue;
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

/// FNV-1a 64-bit hash of `text` as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const TrainConfig& cfg) { return fnv1a_hex(canonical_config(cfg)); }

}  // namespace splatlab
