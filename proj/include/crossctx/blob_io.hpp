#pragma once

// Binary container shared by model checkpoints:
//
//   offset 0   8 bytes   magic "XCTXBLOB"
//   offset 8   8 bytes   header length H, unsigned little-endian
//   offset 16  H bytes   UTF-8 JSON header
//   offset 16+H          float64 little-endian payload
//
// The header carries "blocks": [{"name", "rows", "cols", "offset"}], offsets
// counted in doubles from the payload start, matrices stored row-major.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "crossctx/dataset_io.hpp"
#include "crossctx/errors.hpp"

namespace crossctx {

struct BlobFile {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Eigen::MatrixXd> blocks;
  std::vector<std::string> order;

  void add(const std::string& name, Eigen::MatrixXd m) {
    if (!blocks.count(name)) order.push_back(name);
    blocks[name] = std::move(m);
  }

  const Eigen::MatrixXd& block(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw DataError("crossctx::BlobFile: missing block '" + name + "'");
    return it->second;
  }
};

inline std::string encode_blob(const BlobFile& blob) {
  nlohmann::json header = blob.header;
  header["blocks"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& name : blob.order) {
    const auto& m = blob.blocks.at(name);
    header["blocks"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(m.size());
  }
  const std::string h = header.dump();
  std::string out = "XCTXBLOB";
  const auto hlen = static_cast<std::uint64_t>(h.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((hlen >> (8 * i)) & 0xFF));
  out += h;
  out.reserve(out.size() + offset * 8);
  for (const auto& name : blob.order) {
    const auto& m = blob.blocks.at(name);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const auto bits = std::bit_cast<std::uint64_t>(m(r, c));
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
      }
  }
  return out;
}

inline BlobFile decode_blob(const std::string& bytes, const std::string& where = "blob") {
  auto u64 = [&](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  };
  if (bytes.size() < 16 || bytes.compare(0, 8, "XCTXBLOB") != 0)
    throw DataError("crossctx::decode_blob: " + where + " is not a model file");
  const std::uint64_t hlen = u64(8);
  if (16 + hlen > bytes.size()) throw DataError("crossctx::decode_blob: truncated header in " + where);
  BlobFile blob;
  try {
    blob.header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("crossctx::decode_blob: bad header in " + where + ": " + e.what());
  }
  const std::size_t payload = 16 + hlen;
  for (const auto& b : blob.header.at("blocks")) {
    const auto rows = b.at("rows").get<Eigen::Index>();
    const auto cols = b.at("cols").get<Eigen::Index>();
    const auto off = b.at("offset").get<std::size_t>();
    if (payload + (off + static_cast<std::size_t>(rows * cols)) * 8 > bytes.size())
      throw DataError("crossctx::decode_blob: truncated payload in " + where);
    Eigen::MatrixXd m(rows, cols);
    std::size_t at = payload + off * 8;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c, at += 8) m(r, c) = std::bit_cast<double>(u64(at));
    blob.add(b.at("name").get<std::string>(), std::move(m));
  }
  blob.header.erase("blocks");
  return blob;
}

inline void write_blob_file(const std::filesystem::path& path, const BlobFile& blob) {
  io::write_text_file(path, encode_blob(blob));
}

inline BlobFile read_blob_file(const std::filesystem::path& path) {
  return decode_blob(io::read_text_file(path), "'" + path.string() + "'");
}

}  // namespace crossctx
