#include "kplab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kplab {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {
constexpr const char* kFormat = "kplab-checkpoint";
constexpr int kVersion = 1;
}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.params.entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const nlohmann::json header = {{"format", kFormat}, {"version", kVersion}, {"kind", ckpt.kind},
                                 {"config", ckpt.config}, {"state", ckpt.state},  {"tensors", tensors}};
  std::string out = header.dump() + '\n';
  const std::size_t head = out.size();
  out.resize(head + offset * sizeof(double));
  char* dst = out.data() + head;
  for (const auto& [_, t] : ckpt.params.entries()) {
    std::memcpy(dst, t.ptr(), t.numel() * sizeof(double));
    dst += t.numel() * sizeof(double);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error(ErrorKind::ParseError, origin + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, origin + ": header: " + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kFormat)
    throw Error(ErrorKind::ParseError, origin + ": not a kplab checkpoint");
  if (header.value("version", 0) != kVersion)
    throw Error(ErrorKind::CheckpointMismatch, origin + ": unsupported checkpoint version");
  Checkpoint ckpt;
  const std::size_t blob = nl + 1;
  const std::size_t available = (bytes.size() - blob) / sizeof(double);
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.state = header.at("state");
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset + n > available) throw Error(ErrorKind::ParseError, origin + ": tensor " + name + " runs past the end");
      std::vector<double> v(n);
      std::memcpy(v.data(), bytes.data() + blob + offset * sizeof(double), n * sizeof(double));
      ckpt.params.add(name, Tensor::from(std::move(v), shape));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, origin + ": header: " + e.what());
  }
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  return fnv1a(bytes.data(), bytes.size());
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return fnv1a(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace kplab
