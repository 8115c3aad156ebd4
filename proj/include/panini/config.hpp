#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace panini {

// Plain-text key-value configuration.
//
// Format, line by line:
//   key = value          assignment (whitespace around key/value trimmed)
//   # comment            full-line or trailing comment
//   include other.cfg    inline inclusion, path relative to the including file
//
// Later assignments override earlier ones, so an including file can first
// pull in defaults and then specialize. The PANINI_SEED environment variable,
// when set, overrides the `seed` key after loading.
class Config {
 public:
  Config() = default;

  static Config load(const std::string& path);
  static Config from_string(const std::string& text, const std::string& base_dir = ".");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;

  // Applies the PANINI_SEED environment override to `seed`. Returns true when
  // an override happened. Called by load(); exposed for configs built in code.
  bool apply_env_seed_override();

  // Canonical serialization: sorted `key = value` lines. Parsing the result
  // reproduces the same Config, which is what report embedding relies on.
  std::string serialize() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  void parse(const std::string& text, const std::string& base_dir, const std::string& origin,
             int depth);

  std::map<std::string, std::string> values_;
};

}  // namespace panini
