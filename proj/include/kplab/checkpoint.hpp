#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "kplab/params.hpp"

namespace kplab {

// A serialized model. `kind` is "teacher", "student" or "igpgcn"; `config`
// holds whatever the owner needs to rebuild the model; `state` carries
// training bookkeeping and embedded validation metrics.
struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  ParamSet params;
  nlohmann::json state = nlohmann::json::object();
};

// File layout: one line of JSON header {"format","version","kind","config",
// "state","tensors":[{"name","shape","offset"}]} then the raw little-endian
// f64 values of every tensor in parameter order. Offsets count doubles.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the serialized form.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace kplab
