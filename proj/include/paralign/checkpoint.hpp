#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "paralign/error.hpp"
#include "paralign/trunk.hpp"

namespace paralign {

// Checkpoint layout:
//   8 bytes  magic "PALNCKPT"
//   u32      format version
//   u64      header length, then a JSON header {kind, arch, tensors:[{name,rows,cols}]}
//   raw little-endian float64 tensor data in header order
inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'L', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"audio_vocab", a.audio_vocab}, {"text_vocab", a.text_vocab}, {"d_model", a.d_model},
          {"context", a.context},         {"ff_width", a.ff_width},     {"heads", a.heads}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.audio_vocab = j.at("audio_vocab").get<std::size_t>();
  a.text_vocab = j.at("text_vocab").get<std::size_t>();
  a.d_model = j.at("d_model").get<std::size_t>();
  a.context = j.at("context").get<std::size_t>();
  a.ff_width = j.at("ff_width").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  return a;
}

template <class Params>
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const Params& params) {
  nlohmann::json header{{"kind", kind}, {"arch", arch_to_json(params.arch)}, {"tensors", nlohmann::json::array()}};
  for (const Tensor* t : params.tensors())
    header["tensors"].push_back({{"name", t->name}, {"rows", t->rows}, {"cols", t->cols}});
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t hlen = h.size();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Tensor* t : params.tensors())
    out.write(reinterpret_cast<const char*>(t->data.data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

template <class Params>
Params load_checkpoint(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  require(in && std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0, ErrorKind::Io,
          path.string() + " is not a checkpoint");
  require(version == kCheckpointVersion, ErrorKind::Io, "unsupported checkpoint version " + std::to_string(version));
  require(hlen < (1u << 24), ErrorKind::Io, "corrupt checkpoint header");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "corrupt checkpoint header: " + std::string(e.what()));
  }
  require(header.at("kind") == kind, ErrorKind::Io,
          "checkpoint kind " + header.at("kind").get<std::string>() + " but expected " + kind);
  Params params(arch_from_json(header.at("arch")));
  auto tensors = params.tensors();
  const auto& listed = header.at("tensors");
  require(listed.size() == tensors.size(), ErrorKind::ShapeMismatch, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    require(listed[i].at("name") == tensors[i]->name && listed[i].at("rows") == tensors[i]->rows &&
                listed[i].at("cols") == tensors[i]->cols,
            ErrorKind::ShapeMismatch, "checkpoint tensor " + tensors[i]->name + " has unexpected shape");
    in.read(reinterpret_cast<char*>(tensors[i]->data.data()),
            static_cast<std::streamsize>(tensors[i]->size() * sizeof(double)));
  }
  require(static_cast<bool>(in), ErrorKind::Io, "truncated checkpoint " + path.string());
  return params;
}

}  // namespace paralign
