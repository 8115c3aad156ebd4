#include "panini/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "panini/common.hpp"

namespace fs = std::filesystem;

namespace panini {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string read_file_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Config Config::load(const std::string& path) {
  Config c;
  c.parse(read_file_text(path), fs::path(path).parent_path().string(), path, 0);
  c.apply_env_seed_override();
  return c;
}

Config Config::from_string(const std::string& text, const std::string& base_dir) {
  Config c;
  c.parse(text, base_dir, "<string>", 0);
  return c;
}

void Config::parse(const std::string& text, const std::string& base_dir,
                   const std::string& origin, int depth) {
  if (depth > 16) throw InvalidArgument("config: include depth exceeded at " + origin);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0 || line == "include") {
      const std::string rel = trim(line.substr(7));
      if (rel.empty())
        throw InvalidArgument("config: empty include at " + origin + ":" + std::to_string(lineno));
      fs::path inc = fs::path(rel).is_absolute() ? fs::path(rel) : fs::path(base_dir) / rel;
      parse(read_file_text(inc.string()), inc.parent_path().string(), inc.string(), depth + 1);
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config: malformed line at " + origin + ":" + std::to_string(lineno) +
                            " (expected key = value): " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw InvalidArgument("config: empty key at " + origin + ":" + std::to_string(lineno));
    values_[key] = value;
  }
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("config: missing required key '" + key + "'");
  return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config: key '" + key + "' is not a boolean: " + v);
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not an unsigned integer: " + it->second);
  }
}

bool Config::apply_env_seed_override() {
  const char* env = std::getenv("PANINI_SEED");
  if (!env || !*env) return false;
  values_["seed"] = env;
  return true;
}

std::string Config::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace panini
