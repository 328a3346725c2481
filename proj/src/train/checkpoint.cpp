#include "mvccl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvccl/errors.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

static_assert(std::endian::native == std::endian::little, "checkpoint blocks are stored little-endian");

namespace {

constexpr const char* kMagic = "MVCCL-CHECKPOINT";

std::string shape_text(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Shape parse_shape(std::string_view text) {
  Shape shape;
  if (text.empty()) return shape;
  for (const auto& part : text::split(text, 'x')) shape.push_back(text::parse_size(part, "block shape"));
  return shape;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw DataError("checkpoint: unknown dtype '" + dtype + "'");
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::ostringstream out;
  out << kMagic << '\n' << "format_version=" << format_version << '\n';
  out << "[config]\n";
  for (const auto& [k, v] : config) out << k << '=' << v << '\n';
  out << "[state]\n";
  for (const auto& [k, v] : state) out << k << '=' << v << '\n';
  out << "[blocks]\n";
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    out << b.name << ',' << b.dtype << ',' << shape_text(b.shape) << ',' << offset << '\n';
    offset += b.bytes.size();
  }
  out << "[end]\n";
  for (const auto& b : blocks) out.write(reinterpret_cast<const char*>(b.bytes.data()), b.bytes.size());
  return out.str();
}

Checkpoint Checkpoint::parse(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto end = bytes.find('\n', pos);
    if (end == std::string::npos) throw DataError("checkpoint: truncated header");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  auto split_kv = [](const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed line '" + line + "'");
    return std::make_pair(line.substr(0, eq), line.substr(eq + 1));
  };

  if (next_line() != kMagic) throw DataError("checkpoint: bad magic");
  Checkpoint ckpt;
  const auto [vk, vv] = split_kv(next_line());
  if (vk != "format_version") throw DataError("checkpoint: missing format_version");
  ckpt.format_version = static_cast<int>(text::parse_u64(vv, "format_version"));
  if (ckpt.format_version != kCheckpointFormatVersion) {
    throw DataError("checkpoint: unsupported format_version " + vv);
  }
  if (next_line() != "[config]") throw DataError("checkpoint: missing [config]");
  std::string line;
  while ((line = next_line()) != "[state]") ckpt.config.push_back(split_kv(line));
  while ((line = next_line()) != "[blocks]") ckpt.state.push_back(split_kv(line));
  std::vector<std::size_t> offsets;
  while ((line = next_line()) != "[end]") {
    const auto fields = text::split(line, ',');
    if (fields.size() != 4) throw DataError("checkpoint: malformed block entry '" + line + "'");
    TensorBlock b;
    b.name = fields[0];
    b.dtype = fields[1];
    b.shape = parse_shape(fields[2]);
    offsets.push_back(text::parse_size(fields[3], "block offset"));
    ckpt.blocks.push_back(std::move(b));
  }
  const std::size_t data_start = pos;
  std::size_t expected = 0;
  for (std::size_t i = 0; i < ckpt.blocks.size(); ++i) {
    auto& b = ckpt.blocks[i];
    const std::size_t size = shape_numel(b.shape) * dtype_size(b.dtype);
    if (offsets[i] != expected) throw DataError("checkpoint: block '" + b.name + "' has unexpected offset");
    if (data_start + offsets[i] + size > bytes.size()) throw DataError("checkpoint: block '" + b.name + "' truncated");
    b.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offsets[i]),
                   bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offsets[i] + size));
    expected += size;
  }
  if (data_start + expected != bytes.size()) throw DataError("checkpoint: trailing bytes after last block");
  return ckpt;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const std::string& Checkpoint::state_value(const std::string& key) const {
  for (const auto& [k, v] : state) {
    if (k == key) return v;
  }
  throw DataError("checkpoint: missing state entry '" + key + "'");
}

bool Checkpoint::has_state(const std::string& key) const {
  for (const auto& [k, v] : state) {
    if (k == key) return true;
  }
  return false;
}

const TensorBlock* Checkpoint::find_block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

template <>
std::string dtype_name<float>() {
  return "f32";
}
template <>
std::string dtype_name<double>() {
  return "f64";
}

template <typename T>
TensorBlock make_block(const std::string& name, const Shape& shape, std::span<const T> values) {
  TensorBlock b{name, dtype_name<T>(), shape, {}};
  b.bytes.resize(values.size() * sizeof(T));
  std::memcpy(b.bytes.data(), values.data(), b.bytes.size());
  return b;
}

template <typename T>
void read_block(const TensorBlock& block, std::span<T> out) {
  if (block.dtype != dtype_name<T>()) {
    throw ConfigError("checkpoint block '" + block.name + "' is " + block.dtype + ", expected " + dtype_name<T>());
  }
  if (block.bytes.size() != out.size() * sizeof(T)) {
    throw ConfigError("checkpoint block '" + block.name + "' has " + std::to_string(block.bytes.size() / sizeof(T)) +
                      " values, expected " + std::to_string(out.size()));
  }
  std::memcpy(out.data(), block.bytes.data(), block.bytes.size());
}

template TensorBlock make_block<float>(const std::string&, const Shape&, std::span<const float>);
template TensorBlock make_block<double>(const std::string&, const Shape&, std::span<const double>);
template void read_block<float>(const TensorBlock&, std::span<float>);
template void read_block<double>(const TensorBlock&, std::span<double>);

}  // namespace mvccl
