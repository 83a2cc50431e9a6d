#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdpnet/common.hpp"

namespace gdpnet {

// CRC32 (reflected, poly 0xEDB88320), the common PNG/zip flavor.
inline uint32_t crc32_bytes(const void* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  const unsigned char* p = (const unsigned char*)data;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// Checkpoint container: "GDPC", u32 version, u32 header length, JSON header,
// then one float32 blob per header entry, each followed by its CRC32. The
// header carries config, epoch, metrics, and the exact RNG state; blobs hold
// the numeric arrays in declaration order.
struct CheckpointData {
  nlohmann::json header;
  std::vector<std::pair<std::string, std::vector<float>>> blobs;

  const std::vector<float>& blob(const std::string& name) const {
    for (const auto& [n, v] : blobs)
      if (n == name) return v;
    throw_data("checkpoint: missing blob " + name);
  }
};

namespace detail {

inline void put_u32_of(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff),
                        (unsigned char)((v >> 24) & 0xff)};
  out.write((const char*)b, 4);
}

inline uint32_t take_u32_of(std::ifstream& in, const char* what,
                            const std::string& path) {
  unsigned char b[4];
  if (!in.read((char*)b, 4))
    throw_data(std::string("load_checkpoint: truncated ") + what + " in " + path);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointData& ck) {
  nlohmann::json header = ck.header;
  nlohmann::json blob_list = nlohmann::json::array();
  for (const auto& [name, values] : ck.blobs)
    blob_list.push_back({{"name", name}, {"count", values.size()}});
  header["format"] = "gdpnet-checkpoint";
  header["blobs"] = blob_list;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("save_checkpoint: cannot open " + path);
  std::string hs = header.dump();
  out.write("GDPC", 4);
  detail::put_u32_of(out, 1);
  detail::put_u32_of(out, uint32_t(hs.size()));
  out.write(hs.data(), std::streamsize(hs.size()));
  static_assert(sizeof(float) == 4);
  for (const auto& [name, values] : ck.blobs) {
    out.write((const char*)values.data(), std::streamsize(values.size() * 4));
    detail::put_u32_of(out, crc32_bytes(values.data(), values.size() * 4));
  }
  if (!out) throw_data("save_checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4)) throw_data("load_checkpoint: truncated magic in " + path);
  if (std::string(magic, 4) != "GDPC")
    throw_data("load_checkpoint: bad magic in " + path);
  uint32_t version = detail::take_u32_of(in, "version", path);
  if (version != 1)
    throw_data("load_checkpoint: unsupported version " + std::to_string(version) +
               " in " + path);
  uint32_t hlen = detail::take_u32_of(in, "header length", path);
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), hlen))
    throw_data("load_checkpoint: truncated header in " + path);

  CheckpointData ck;
  try {
    ck.header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw_data("load_checkpoint: header parse error in " + path + ": " + e.what());
  }
  if (ck.header.value("format", "") != "gdpnet-checkpoint")
    throw_data("load_checkpoint: not a checkpoint header in " + path);

  for (const auto& entry : ck.header.at("blobs")) {
    std::string name = entry.at("name").get<std::string>();
    size_t count = entry.at("count").get<size_t>();
    std::vector<float> values(count);
    if (count > 0 && !in.read((char*)values.data(), std::streamsize(count * 4)))
      throw_data("load_checkpoint: corrupt blob " + name + " in " + path +
                 " (short read)");
    uint32_t stored = detail::take_u32_of(in, ("crc of " + name).c_str(), path);
    uint32_t actual = crc32_bytes(values.data(), values.size() * 4);
    if (stored != actual)
      throw_data("load_checkpoint: corrupt blob " + name + " in " + path +
                 " (checksum mismatch)");
    ck.blobs.emplace_back(std::move(name), std::move(values));
  }
  char extra;
  if (in.read(&extra, 1))
    throw_data("load_checkpoint: trailing bytes in " + path);
  ck.header.erase("blobs");
  ck.header.erase("format");
  return ck;
}

}  // namespace gdpnet
