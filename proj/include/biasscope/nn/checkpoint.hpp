#pragma once

// Versioned checkpoint container:
//
//   8 bytes   magic "BSCKPT01"
//   8 bytes   little-endian u64 header length N
//   N bytes   JSON header: format_version, metadata, vocabulary, tensors[]
//   payload   for each header tensor in order: rows*cols little-endian f64,
//             column-major
//
// The metadata object is opaque here; models put their config and training
// provenance into it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/common.hpp"
#include "biasscope/nn/tensor.hpp"

namespace biasscope::nn {

inline constexpr char kCheckpointMagic[8] = {'B', 'S', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct CheckpointData {
  nlohmann::json metadata;
  std::vector<std::string> vocabulary;
  std::map<std::string, Mat> tensors;
};

inline void write_checkpoint(std::ostream& out, const nlohmann::json& metadata, const std::vector<std::string>& vocab,
                             const std::map<std::string, const Param*>& params) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["metadata"] = metadata;
  header["vocabulary"] = vocab;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, p] : params)
    header["tensors"].push_back({{"name", name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const std::string h = header.dump();
  const std::uint64_t n = h.size();
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, p] : params)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  if (!out) throw Error("failed writing checkpoint");
}

inline CheckpointData read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not a checkpoint file");
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof n)) throw DataError("truncated checkpoint header");
  std::string h(n, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(h);
  if (header.at("format_version").get<int>() != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + header.at("format_version").dump());
  CheckpointData out;
  out.metadata = header.at("metadata");
  out.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
  for (const auto& t : header.at("tensors")) {
    Mat m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size())))
      throw DataError("truncated checkpoint payload");
    out.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  return out;
}

// Copies tensors into params by name; every param must be present with the
// same shape.
inline void load_tensors(const CheckpointData& ck, const ParamRefs& params) {
  for (auto* p : params) {
    auto it = ck.tensors.find(p->name);
    if (it == ck.tensors.end()) throw DataError("checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw DataError("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = it->second;
  }
}

}  // namespace biasscope::nn
