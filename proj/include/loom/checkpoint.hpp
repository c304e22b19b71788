// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loom/common.hpp"
#include "loom/param_store.hpp"

namespace loom {

// ===========================================================================
// Model checkpoints.
//
// Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
// then one raw little-endian f64 payload per tensor in header order. The
// header records format version, tensor names/shapes/roles, and a CRC-32 of
// the whole payload region, plus a free-form "extra" object for run state
// (step counters and the like). Round-trips are bit-exact.
// ===========================================================================

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'O', 'M', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  nlohmann::json extra;
};

namespace detail {

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

// Shared container plumbing: verifies magic, reads the header length and
// returns the parsed JSON header plus the payload offset.
inline nlohmann::json parse_container_header(const std::vector<uint8_t>& bytes,
                                             const char magic[8], const std::string& what,
                                             size_t* payload_offset) {
  if (bytes.size() < 16 || !std::equal(magic, magic + 8, bytes.begin()))
    throw DataError("not a " + what + " file");
  const uint64_t header_len = read_u64_le(bytes.data() + 8);
  if (16 + header_len > bytes.size())
    throw TruncationError(what + " header extends past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(what + " header is not valid JSON: " + e.what());
  }
  *payload_offset = 16 + static_cast<size_t>(header_len);
  return header;
}

inline std::vector<uint8_t> build_container(const char magic[8], const nlohmann::json& header,
                                            const std::vector<uint8_t>& payload) {
  const std::string h = header.dump();
  std::vector<uint8_t> bytes(magic, magic + 8);
  bytes.reserve(16 + h.size() + payload.size());
  append_u64_le(bytes, h.size());
  bytes.insert(bytes.end(), h.begin(), h.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  return bytes;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::vector<uint8_t> payload;
  payload.reserve(static_cast<size_t>(params.total_elements()) * 8);
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    const ParamGroupTag& tag = params.tag(i);
    tensors.push_back({{"name", params.name(i)},
                       {"shape", t.shape},
                       {"kind", param_kind_name(tag.kind)},
                       {"side", side_name(tag.side)},
                       {"layer", tag.layer}});
    for (double v : t.values) append_f64_le(payload, v);
  }
  nlohmann::json header = {{"format", "model_checkpoint"},
                           {"version", kCheckpointVersion},
                           {"dtype", "f64le"},
                           {"tensors", tensors},
                           {"payload_crc32", crc32(payload.data(), payload.size())},
                           {"extra", extra}};
  detail::write_file_bytes(path, detail::build_container(kCheckpointMagic, header, payload));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
  size_t off = 0;
  const nlohmann::json header =
      detail::parse_container_header(bytes, kCheckpointMagic, "checkpoint", &off);

  const uint32_t version = header.at("version").get<uint32_t>();
  if (version > kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) +
                       " is newer than supported version " + std::to_string(kCheckpointVersion));
  if (header.at("dtype").get<std::string>() != "f64le")
    throw DataError("unsupported checkpoint dtype '" + header.at("dtype").get<std::string>() + "'");

  const uint32_t want_crc = header.at("payload_crc32").get<uint32_t>();
  const uint32_t got_crc = crc32(bytes.data() + off, bytes.size() - off);
  if (want_crc != got_crc) throw ChecksumError("checkpoint payload CRC mismatch");

  Checkpoint ckpt;
  ckpt.extra = header.value("extra", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Tensor t;
    t.shape = entry.at("shape").get<Shape>();
    t.check_dims();
    const size_t count = static_cast<size_t>(numel(t.shape));
    if (off + count * 8 > bytes.size())
      throw TruncationError("checkpoint payload truncated in tensor '" +
                            entry.at("name").get<std::string>() + "'");
    t.values.resize(count);
    for (size_t k = 0; k < count; ++k) t.values[k] = read_f64_le(bytes.data() + off + k * 8);
    off += count * 8;
    ParamGroupTag tag{param_kind_from_name(entry.at("kind").get<std::string>()),
                      side_from_name(entry.at("side").get<std::string>()),
                      entry.at("layer").get<int>()};
    ckpt.params.add(entry.at("name").get<std::string>(), std::move(t), tag);
  }
  if (off != bytes.size())
    throw DataError("checkpoint has " + std::to_string(bytes.size() - off) +
                    " trailing bytes after payload");
  return ckpt;
}

}  // namespace loom
