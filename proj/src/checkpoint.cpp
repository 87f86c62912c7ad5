#include "friendnet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace friendnet {
namespace {

constexpr char kMagic[8] = {'F', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json shape_json(const Shape& s) { return nlohmann::json::array({s.n, s.c, s.h, s.w}); }

std::uint64_t data_checksum(const std::vector<NamedTensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors) h = fnv1a64(t.tensor.data(), t.tensor.size() * sizeof(float), h);
  return h;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checksum_hex(std::uint64_t checksum) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(checksum));
  return buf;
}

Checkpoint snapshot(const nn::Module<float>& module, std::string kind, nlohmann::json config) {
  Checkpoint ck;
  ck.kind = std::move(kind);
  ck.config = std::move(config);
  for (const auto& p : module.parameters()) ck.tensors.push_back({p.name, p.var->value()});
  for (const auto& b : module.buffers()) ck.tensors.push_back({b.name, *b.tensor});
  ck.checksum = data_checksum(ck.tensors);
  return ck;
}

std::uint64_t module_checksum(const nn::Module<float>& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : module.parameters()) h = fnv1a64(p.var->value().data(), p.var->value().size() * sizeof(float), h);
  for (const auto& b : module.buffers()) h = fnv1a64(b.tensor->data(), b.tensor->size() * sizeof(float), h);
  return h;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    dir.push_back({{"name", t.name}, {"shape", shape_json(t.tensor.shape())}, {"offset", offset}});
    offset += t.tensor.size();
  }
  const nlohmann::json header{{"kind", ck.kind},
                              {"config", ck.config},
                              {"tensors", dir},
                              {"count", offset},
                              {"checksum", checksum_hex(data_checksum(ck.tensors))}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ck.tensors) {
    out.write(reinterpret_cast<const char*>(t.tensor.data()), static_cast<std::streamsize>(t.tensor.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  if (version != kVersion) throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  if (len > (1ULL << 30)) throw CheckpointError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  Checkpoint ck;
  try {
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
    for (const auto& entry : header.at("tensors")) {
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw CheckpointError(path.string() + ": tensor rank must be 4");
      Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      if (!in) throw CheckpointError(path.string() + ": truncated data");
      ck.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  ck.checksum = data_checksum(ck.tensors);
  if (checksum_hex(ck.checksum) != header.at("checksum").get<std::string>()) {
    throw CheckpointError(path.string() + ": checksum mismatch (corrupt checkpoint)");
  }
  return ck;
}

void load_into(const Checkpoint& ck, nn::Module<float>& module) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t.tensor;
  auto fetch = [&](const std::string& name, const Shape& want) -> const Tensor<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (!(it->second->shape() == want)) {
      throw CheckpointError("tensor '" + name + "' has shape " + it->second->shape().str() + ", expected " + want.str());
    }
    return *it->second;
  };
  const auto params = module.parameters();
  const auto buffers = module.buffers();
  if (params.size() + buffers.size() != ck.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, module expects " +
                          std::to_string(params.size() + buffers.size()));
  }
  for (const auto& p : params) p.var->mutable_value() = fetch(p.name, p.var->value().shape());
  for (const auto& b : buffers) *b.tensor = fetch(b.name, b.tensor->shape());
}

}  // namespace friendnet
