#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "panini/nn.hpp"
#include "panini/tensor.hpp"

namespace panini {

// Versioned checkpoint container shared by every trainable module.
//
// File layout (little-endian):
//   bytes 0..7   magic "PNCKPT\0\0"
//   u32          format version (currently 1)
//   u64          JSON header length in bytes
//   ...          JSON header: kind, config echo, extra state, tensor directory
//   ...          raw float32 payload, one blob per directory entry, in order
//
// Saves are atomic: the file is written to "<path>.tmp" and renamed into
// place. Round-trips are bit-exact because payloads are raw IEEE-754 bytes.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string kind;                            // e.g. "dre", "gpm", "panini"
  std::map<std::string, std::string> config;   // architecture/config echo
  nlohmann::json extra = nlohmann::json::object();  // small scalar state
  std::map<std::string, Tensor> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  bool has_tensor(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& tensor(const std::string& name) const;  // incompatible-checkpoint if absent

  // Config echo helpers; raise incompatible-checkpoint on missing/bad keys so
  // callers surface schema drift with the right error class.
  int64_t config_int(const std::string& key) const;
  double config_double(const std::string& key) const;
  std::string config_str(const std::string& key) const;
};

// Copies every param into the checkpoint under its registered name.
void store_params(Checkpoint& ckpt, const std::vector<nn::ParamRef<float>>& refs);

// Loads params by name; missing names or shape mismatches raise
// incompatible-checkpoint.
void load_params(const Checkpoint& ckpt, std::vector<nn::ParamRef<float>>& refs);

}  // namespace panini
