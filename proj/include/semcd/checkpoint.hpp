#pragma once

#include <torch/torch.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"
#include "semcd/sha256.hpp"
#include "semcd/tensor_utils.hpp"

namespace semcd {

// File layout: 8-byte magic, u64 little-endian header length, JSON header,
// raw tensor payload. The header records per-tensor offsets and the payload
// SHA-256.
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'C', 'D', 'C', 'K', 'P'};
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::string fingerprint;
  std::map<std::string, torch::Tensor> tensors;
  nlohmann::json stage_history = nlohmann::json::array();
  /// Serialized state of the default CPU generator (empty when not captured).
  std::vector<std::uint8_t> rng_state;

  bool has_stage(std::string_view stage) const {
    for (const auto& h : stage_history)
      if (h.value("stage", "") == stage) return true;
    return false;
  }
};

namespace detail {

inline std::string dtype_name(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kUInt8: return "uint8";
    default: fail(ErrorKind::InvalidArgument, "unsupported checkpoint dtype");
  }
}

inline torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  if (s == "uint8") return torch::kUInt8;
  fail(ErrorKind::CorruptFile, "unknown dtype '" + s + "'");
}

}  // namespace detail

inline std::vector<std::uint8_t> capture_rng_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  auto state = gen.get_state().contiguous();
  auto* p = state.data_ptr<std::uint8_t>();
  return {p, p + state.numel()};
}

inline void restore_rng_state(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) return;
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  auto state = torch::empty({static_cast<int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(state.data_ptr(), bytes.data(), bytes.size());
  gen.set_state(state);
}

/// Snapshot of `module`'s parameters (optionally only names with one of
/// `prefixes`).
inline Checkpoint capture_checkpoint(const torch::nn::Module& module, nlohmann::json config, std::string fingerprint,
                                     const std::vector<std::string>& prefixes = {}) {
  Checkpoint ck;
  ck.config = std::move(config);
  ck.fingerprint = std::move(fingerprint);
  for (const auto& item : module.named_parameters(true)) {
    if (!prefixes.empty() && !has_any_prefix(item.key(), prefixes)) continue;
    ck.tensors.emplace(item.key(), item.value().detach().clone().contiguous());
  }
  ck.rng_state = capture_rng_state();
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                        {"config", ck.config},
                        {"fingerprint", ck.fingerprint},
                        {"stage_history", ck.stage_history}};
  auto entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  Sha256 payload_hash;
  std::vector<torch::Tensor> ordered;
  for (const auto& [name, t] : ck.tensors) {
    auto c = t.detach().contiguous().cpu();
    std::vector<int64_t> shape(c.sizes().begin(), c.sizes().end());
    const auto nbytes = static_cast<std::uint64_t>(c.nbytes());
    entries.push_back({{"name", name}, {"dtype", detail::dtype_name(c)}, {"shape", shape}, {"offset", offset},
                       {"nbytes", nbytes}});
    payload_hash.update({static_cast<const std::uint8_t*>(c.data_ptr()), nbytes});
    offset += nbytes;
    ordered.push_back(c);
  }
  payload_hash.update(ck.rng_state);
  header["tensors"] = entries;
  header["rng_bytes"] = ck.rng_state.size();
  header["payload_size"] = offset + ck.rng_state.size();
  header["payload_sha256"] = to_hex(payload_hash.finish());

  const auto text = header.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : ordered) out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.nbytes()));
    out.write(reinterpret_cast<const char*>(ck.rng_state.data()), static_cast<std::streamsize>(ck.rng_state.size()));
    require(out.good(), ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::IoError, "cannot move checkpoint into place: " + ec.message());
}

/// Reads and verifies a checkpoint. When `expected_fingerprint` is given, a
/// different architecture fingerprint is a VersionMismatch.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<std::string>& expected_fingerprint = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IoError, "cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t prefix = sizeof(kCheckpointMagic) + sizeof(std::uint64_t);
  require(bytes.size() >= prefix && std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
          ErrorKind::CorruptFile, path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kCheckpointMagic), sizeof(len));
  require(len <= bytes.size() - prefix, ErrorKind::CorruptFile, path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptFile, path.string() + ": unreadable header: " + e.what());
  }
  require(header.value("format_version", -1) == kCheckpointFormatVersion, ErrorKind::VersionMismatch,
          path.string() + ": unsupported format_version");

  const std::size_t payload_begin = prefix + len;
  const auto payload_size = header.at("payload_size").get<std::uint64_t>();
  require(bytes.size() - payload_begin == payload_size, ErrorKind::CorruptFile,
          path.string() + ": payload is " + std::to_string(bytes.size() - payload_begin) + " bytes, header says " +
              std::to_string(payload_size));
  const auto* payload = reinterpret_cast<const std::uint8_t*>(bytes.data() + payload_begin);
  require(sha256_hex(std::span<const std::uint8_t>(payload, payload_size)) == header.at("payload_sha256"),
          ErrorKind::CorruptFile, path.string() + ": payload checksum mismatch");

  Checkpoint ck;
  ck.config = header.at("config");
  ck.fingerprint = header.at("fingerprint").get<std::string>();
  ck.stage_history = header.value("stage_history", nlohmann::json::array());
  if (expected_fingerprint) {
    require(ck.fingerprint == *expected_fingerprint, ErrorKind::VersionMismatch,
            path.string() + ": config fingerprint " + ck.fingerprint.substr(0, 12) + " does not match expected " +
                expected_fingerprint->substr(0, 12));
  }
  std::uint64_t tensor_bytes = 0;
  for (const auto& e : header.at("tensors")) {
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    auto dtype = detail::parse_dtype(e.at("dtype").get<std::string>());
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    require(static_cast<std::uint64_t>(t.nbytes()) == nbytes && offset + nbytes <= payload_size, ErrorKind::CorruptFile,
            path.string() + ": inconsistent entry for " + e.at("name").get<std::string>());
    std::memcpy(t.data_ptr(), payload + offset, nbytes);
    ck.tensors.emplace(e.at("name").get<std::string>(), t);
    tensor_bytes += nbytes;
  }
  const auto rng_bytes = header.value("rng_bytes", std::uint64_t{0});
  require(tensor_bytes + rng_bytes == payload_size, ErrorKind::CorruptFile, path.string() + ": payload accounting");
  ck.rng_state.assign(payload + tensor_bytes, payload + tensor_bytes + rng_bytes);
  return ck;
}

/// Copies checkpoint tensors into `module`. With `strict`, the checkpoint must
/// cover every parameter; otherwise only the names it contains are copied.
/// Missing names or shape differences are CheckpointMismatch.
inline void apply_checkpoint(torch::nn::Module& module, const Checkpoint& ck, bool strict = true) {
  torch::NoGradGuard guard;
  auto params = module.named_parameters(true);
  for (const auto& [name, t] : ck.tensors) {
    auto* p = params.find(name);
    require(p != nullptr, ErrorKind::CheckpointMismatch, "checkpoint tensor '" + name + "' has no model parameter");
    require(p->sizes() == t.sizes(), ErrorKind::CheckpointMismatch,
            "shape mismatch for '" + name + "'");
    p->copy_(t.to(p->dtype()));
  }
  if (strict) {
    for (const auto& item : params) {
      require(ck.tensors.contains(item.key()), ErrorKind::CheckpointMismatch,
              "checkpoint lacks parameter '" + item.key() + "'");
    }
  }
}

}  // namespace semcd
