#include "panini/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "panini/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace panini {

namespace {

constexpr char kMagic[8] = {'P', 'N', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";

  json header;
  header["kind"] = kind;
  header["config"] = config;
  header["extra"] = extra;
  json dir = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    dir.push_back(e);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  header["tensors"] = dir;
  const std::string htext = header.dump();

  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint64_t>(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : tensors)
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("checkpoint: rename " + tmp + " -> " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IncompatibleCheckpoint("checkpoint: bad magic in " + path);
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != kVersion)
    throw IncompatibleCheckpoint("checkpoint: unsupported version " + std::to_string(version) +
                                 " in " + path);
  const uint64_t hlen = read_pod<uint64_t>(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IncompatibleCheckpoint("checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw IncompatibleCheckpoint("checkpoint: corrupt header in " + path + ": " + e.what());
  }

  Checkpoint c;
  c.kind = header.value("kind", "");
  if (header.contains("config"))
    c.config = header["config"].get<std::map<std::string, std::string>>();
  if (header.contains("extra")) c.extra = header["extra"];
  for (const auto& e : header["tensors"]) {
    const std::string name = e["name"].get<std::string>();
    const std::vector<int> shape = e["shape"].get<std::vector<int>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw IncompatibleCheckpoint("checkpoint: truncated payload in " + path);
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw IncompatibleCheckpoint("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

int64_t Checkpoint::config_int(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end())
    throw IncompatibleCheckpoint("checkpoint: missing config key '" + key + "'");
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw IncompatibleCheckpoint("checkpoint: non-integer config key '" + key + "'");
  }
}

double Checkpoint::config_double(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end())
    throw IncompatibleCheckpoint("checkpoint: missing config key '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw IncompatibleCheckpoint("checkpoint: non-numeric config key '" + key + "'");
  }
}

std::string Checkpoint::config_str(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end())
    throw IncompatibleCheckpoint("checkpoint: missing config key '" + key + "'");
  return it->second;
}

void store_params(Checkpoint& ckpt, const std::vector<nn::ParamRef<float>>& refs) {
  for (const auto& r : refs) ckpt.tensors[r.name] = *r.value;
}

void load_params(const Checkpoint& ckpt, std::vector<nn::ParamRef<float>>& refs) {
  for (auto& r : refs) {
    const Tensor& src = ckpt.tensor(r.name);
    if (!(src.shape() == r.value->shape()))
      throw IncompatibleCheckpoint("checkpoint: shape mismatch for '" + r.name + "': stored " +
                                   src.shape_str() + " vs model " + r.value->shape_str());
    *r.value = src;
  }
}

}  // namespace panini
