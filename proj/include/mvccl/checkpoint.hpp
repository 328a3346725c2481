#pragma once

// Checkpoint container:
//
//   MVCCL-CHECKPOINT
//   format_version=1
//   [config]            key=value lines (model.*)
//   [state]             key=value lines (epoch, lr, optimiser counters, ...)
//   [blocks]            name,dtype,shape,offset  (shape "2x3", "" for scalars)
//   [end]
//   <raw little-endian block bytes; offsets relative to the byte after [end]\n>
//
// Parsing keeps every string verbatim so save(load(x)) reproduces x.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvccl/tensor.hpp"

namespace mvccl {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorBlock {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> state;
  std::vector<TensorBlock> blocks;

  std::string serialize() const;
  static Checkpoint parse(const std::string& bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const std::string& state_value(const std::string& key) const;
  bool has_state(const std::string& key) const;
  const TensorBlock* find_block(const std::string& name) const;
};

template <typename T>
std::string dtype_name();

template <typename T>
TensorBlock make_block(const std::string& name, const Shape& shape, std::span<const T> values);

/// Copies a block into `out`; throws ConfigError on dtype or size mismatch.
template <typename T>
void read_block(const TensorBlock& block, std::span<T> out);

}  // namespace mvccl
