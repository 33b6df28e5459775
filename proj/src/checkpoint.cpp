#include "shadowpeft/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace shadowpeft {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'F', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::set<std::string> seen;
  for (const auto& p : params) {
    if (!seen.insert(p.name).second) {
      throw CheckpointError("checkpoint: duplicate tensor name '" + p.name + "'");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint64_t>(out, static_cast<uint64_t>(params.size()));
  for (const auto& p : params) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<uint8_t>(out, p.tensor.requires_grad() ? 1 : 0);
    write_pod<uint8_t>(out, p.tensor.dtype() == DType::kF32 ? 0 : 1);
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.tensor.rank()));
    for (int64_t i = 0; i < p.tensor.rank(); ++i) {
      write_pod<uint64_t>(out, static_cast<uint64_t>(p.tensor.dim(i)));
    }
    const int64_t n = p.tensor.numel();
    if (p.tensor.dtype() == DType::kF32) {
      for (int64_t i = 0; i < n; ++i) write_pod<float>(out, static_cast<float>(p.tensor.at(i)));
    } else {
      out.write(reinterpret_cast<const char*>(p.tensor.data()),
                static_cast<std::streamsize>(n) * static_cast<std::streamsize>(sizeof(double)));
    }
  }
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in '" + path + "'");
  }
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unknown format version " + std::to_string(version));
  }
  const auto count = read_pod<uint64_t>(in, "entry count");
  std::vector<CheckpointEntry> entries;
  std::set<std::string> seen;
  for (uint64_t e = 0; e < count; ++e) {
    CheckpointEntry entry;
    const auto name_len = read_pod<uint32_t>(in, "name length");
    entry.name.resize(name_len);
    in.read(entry.name.data(), name_len);
    if (!in) throw CheckpointError("checkpoint: truncated name");
    if (!seen.insert(entry.name).second) {
      throw CheckpointError("checkpoint: duplicate tensor name '" + entry.name + "'");
    }
    entry.trainable = read_pod<uint8_t>(in, "trainable flag") != 0;
    const auto dtype_tag = read_pod<uint8_t>(in, "dtype");
    if (dtype_tag > 1) throw CheckpointError("checkpoint: unknown dtype tag");
    entry.dtype = dtype_tag == 0 ? DType::kF32 : DType::kF64;
    const auto rank = read_pod<uint32_t>(in, "rank");
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const auto extent = read_pod<uint64_t>(in, "extent");
      entry.shape.push_back(static_cast<int64_t>(extent));
      numel *= static_cast<int64_t>(extent);
    }
    entry.data.resize(static_cast<size_t>(numel));
    if (entry.dtype == DType::kF32) {
      for (int64_t i = 0; i < numel; ++i) {
        entry.data[static_cast<size_t>(i)] =
            static_cast<double>(read_pod<float>(in, "payload"));
      }
    } else {
      in.read(reinterpret_cast<char*>(entry.data.data()),
              static_cast<std::streamsize>(numel) * static_cast<std::streamsize>(sizeof(double)));
      if (!in) throw CheckpointError("checkpoint: truncated payload");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

void load_checkpoint_into(const std::string& path, std::vector<NamedParam> params) {
  auto entries = read_checkpoint(path);
  std::map<std::string, CheckpointEntry*> by_name;
  for (auto& e : entries) by_name[e.name] = &e;

  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint: missing tensor '" + p.name + "'");
    }
    CheckpointEntry& e = *it->second;
    if (e.shape != p.tensor.shape()) {
      throw CheckpointError("checkpoint: shape mismatch for '" + p.name + "': file has " +
                            shape_str(e.shape) + ", model has " + shape_str(p.tensor.shape()));
    }
    if (e.dtype != p.tensor.dtype()) {
      throw CheckpointError("checkpoint: dtype mismatch for '" + p.name +
                            "' (run.precision differs from the saved model)");
    }
    for (int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.at(i) = e.data[static_cast<size_t>(i)];
    p.tensor.set_requires_grad(e.trainable);
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw CheckpointError("checkpoint: unconsumed tensor '" + by_name.begin()->first + "'");
  }
}

}  // namespace shadowpeft
