#pragma once

#include "shadowpeft/linalg.hpp"

namespace shadowpeft {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointEntry {
  std::string name;
  bool trainable = false;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> data;
};

/// Binary layout (all integers little-endian):
///   8-byte magic "SPFTCKPT", u32 version, u64 entry count; per entry:
///   u32 name length + UTF-8 name, u8 trainable, u8 dtype (0=f32, 1=f64),
///   u32 rank, u64 extents[rank], row-major IEEE-754 payload.
/// Save/load round-trips are bit-exact; names must be unique; unknown
/// versions are rejected.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Strict by-name restore into existing tensors: every model parameter must
/// be present with a matching shape, and every file entry must be consumed.
/// Restores the trainable flag from the file.
void load_checkpoint_into(const std::string& path, std::vector<NamedParam> params);

}  // namespace shadowpeft
