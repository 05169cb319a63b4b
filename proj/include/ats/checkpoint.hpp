#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ats/errors.hpp"
#include "ats/param_set.hpp"

namespace ats {

// Checkpoint archive, version 1. Little-endian throughout:
//
//   magic "ATCK", u32 version
//   u64 config_hash
//   u32 stage_len,        stage tag bytes
//   u32 model_config_len, canonical model-config text (self-describing)
//   u32 n_params, then per parameter in name-sorted order:
//     u32 name_len, name bytes
//     u8 dtype (1 = f32, 2 = f64), u8 trainable
//     u32 ndim, u64 dims[ndim]
//     u64 payload byte offset
//   u64 payload_size, raw tensor payloads
//
// Readers reject unknown versions and dtype mismatches.

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::string stage;
  uint64_t config_hash = 0;
  std::string model_config_text;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

template <class V>
void put(std::ofstream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::ifstream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}

inline void put_str(std::ofstream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::ifstream& is) {
  const auto len = get<uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

template <class T>
constexpr uint8_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 1;
  else return 2;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params,
                     const CheckpointInfo& info) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for write: " + path);
  os.write("ATCK", 4);
  detail::put<uint32_t>(os, kCheckpointVersion);
  detail::put<uint64_t>(os, info.config_hash);
  detail::put_str(os, info.stage);
  detail::put_str(os, info.model_config_text);
  detail::put<uint32_t>(os, static_cast<uint32_t>(params.size()));

  uint64_t offset = 0;
  for (const auto& [name, entry] : params) {
    detail::put_str(os, name);
    detail::put<uint8_t>(os, detail::dtype_tag<T>());
    detail::put<uint8_t>(os, entry.trainable ? 1 : 0);
    detail::put<uint32_t>(os, static_cast<uint32_t>(entry.value.shape().size()));
    for (size_t d : entry.value.shape()) detail::put<uint64_t>(os, d);
    detail::put<uint64_t>(os, offset);
    offset += entry.value.numel() * sizeof(T);
  }
  detail::put<uint64_t>(os, offset);
  for (const auto& [name, entry] : params) {
    (void)name;
    os.write(reinterpret_cast<const char*>(entry.value.data()),
             static_cast<std::streamsize>(entry.value.numel() * sizeof(T)));
  }
  if (!os) throw CheckpointError("short write to checkpoint: " + path);
}

inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ATCK", 4) != 0) {
    throw CheckpointError("bad checkpoint magic: " + path);
  }
  const auto version = detail::get<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          ": " + path);
  }
  CheckpointInfo info;
  info.config_hash = detail::get<uint64_t>(is);
  info.stage = detail::get_str(is);
  info.model_config_text = detail::get_str(is);
  if (!is) throw CheckpointError("truncated checkpoint header: " + path);
  return info;
}

template <class T>
ParamSet<T> load_checkpoint(const std::string& path, CheckpointInfo* info_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ATCK", 4) != 0) {
    throw CheckpointError("bad checkpoint magic: " + path);
  }
  const auto version = detail::get<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          ": " + path);
  }
  CheckpointInfo info;
  info.config_hash = detail::get<uint64_t>(is);
  info.stage = detail::get_str(is);
  info.model_config_text = detail::get_str(is);

  struct Entry {
    std::string name;
    bool trainable;
    std::vector<size_t> shape;
    uint64_t offset;
    size_t numel;
  };
  const auto n_params = detail::get<uint32_t>(is);
  std::vector<Entry> entries;
  entries.reserve(n_params);
  for (uint32_t i = 0; i < n_params; ++i) {
    Entry e;
    e.name = detail::get_str(is);
    const auto dtype = detail::get<uint8_t>(is);
    if (dtype != detail::dtype_tag<T>()) {
      throw CheckpointError("checkpoint dtype mismatch for '" + e.name +
                            "' (stored tag " + std::to_string(dtype) + "): " + path);
    }
    e.trainable = detail::get<uint8_t>(is) != 0;
    const auto ndim = detail::get<uint32_t>(is);
    e.numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<size_t>(detail::get<uint64_t>(is)));
      e.numel *= e.shape.back();
    }
    if (ndim == 0) e.numel = 0;
    e.offset = detail::get<uint64_t>(is);
    entries.push_back(std::move(e));
  }
  const auto payload_size = detail::get<uint64_t>(is);
  if (!is) throw CheckpointError("truncated checkpoint manifest: " + path);

  const auto payload_start = is.tellg();
  ParamSet<T> params;
  for (const auto& e : entries) {
    if (e.offset + e.numel * sizeof(T) > payload_size) {
      throw CheckpointError("checkpoint manifest offset out of range for '" + e.name +
                            "': " + path);
    }
    Tensor<T> t(e.shape);
    is.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(e.numel * sizeof(T)));
    if (!is) throw CheckpointError("truncated checkpoint payload at '" + e.name +
                                   "': " + path);
    params.add(e.name, std::move(t), e.trainable);
  }
  if (info_out) *info_out = info;
  return params;
}

}  // namespace ats
