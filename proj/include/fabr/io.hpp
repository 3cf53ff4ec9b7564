#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fabr/phantom.hpp"
#include "fabr/volume.hpp"

namespace fabr {

// ---------------------------------------------------------------------------
// Volume files
// ---------------------------------------------------------------------------
// Layout: magic "FABRVOL1" (8 bytes) | u32 version=1 | u32 C,H,W,D |
// u8 dtype (0 = f32, 1 = u8) | payload, little-endian, channel-major.
// Intensity volumes are stored as f32 with C=1; masks as u8 with C=1.
// Readers reject a wrong magic, a truncated payload (reporting the byte
// position), and a dtype other than the one asked for.

void write_volume(const std::string& path, const VolumeF& vol);
VolumeF read_volume(const std::string& path);

void write_mask(const std::string& path, const MaskU8& mask);
MaskU8 read_mask(const std::string& path);

// ---------------------------------------------------------------------------
// Branch files
// ---------------------------------------------------------------------------
// Text, one line per centerline voxel: `branch_id parent_id x y z radius`.
// Lines of one branch are consecutive and keep centerline order. Cap centers
// are not serialized (they matter only to the rasterizer); generation is
// recomputed from parent links on read.

void write_branches(const std::string& path, const std::vector<Branch>& branches);
std::vector<Branch> read_branches(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Layout: magic "FABRCKP1" | u32 version=1 | u64 config_hash | u64 step |
// u32 epoch | u32 array count | per array: u32 name length | name bytes |
// u32 rank | u32 dims[rank] | f32 values. Everything little-endian. The
// writer emits arrays in the order given, so save(load(file)) is
// byte-identical as long as callers keep a fixed parameter order.

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;  // optimizer steps taken
  std::uint32_t epoch = 0; // completed epochs
  std::vector<NamedArray> arrays;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// FNV-1a over bytes; used to stamp checkpoints with their config.
std::uint64_t fnv1a64(const std::string& s);

// Shortest decimal form that parses back to exactly the same value.
std::string format_float(float v);
std::string format_double(double v);

// Whole-file helpers (binary-safe). read_text_file throws on a missing file.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace fabr
