#include "ghostprobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace ghostprobe {

namespace {

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
bool get_le(std::istream& is, U& value) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

constexpr std::size_t kMagicLength = sizeof(kCheckpointMagic) - 1;
constexpr std::uint32_t kMaxNameLength = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, kMagicLength);
  for (const auto& rec : records) {
    if (shape_numel(rec.shape) != static_cast<std::int64_t>(rec.values.size())) {
      throw DimensionError("checkpoint record " + rec.name + " has inconsistent size");
    }
    put_le(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_le(os, static_cast<std::uint32_t>(rec.shape.size()));
    for (const auto extent : rec.shape) put_le(os, static_cast<std::uint64_t>(extent));
    for (const float v : rec.values) put_le(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw FormatError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  char magic[kMagicLength];
  if (!is.read(magic, kMagicLength) || std::memcmp(magic, kCheckpointMagic, kMagicLength) != 0) {
    throw FormatError("not a DPGP1 checkpoint: " + path.string());
  }
  std::vector<CheckpointRecord> records;
  std::uint32_t name_length = 0;
  while (get_le(is, name_length)) {
    if (name_length > kMaxNameLength) throw FormatError("checkpoint name length corrupt");
    CheckpointRecord rec;
    rec.name.resize(name_length);
    std::uint32_t rank = 0;
    if (!is.read(rec.name.data(), name_length) || !get_le(is, rank) || rank > kMaxRank) {
      throw FormatError("truncated checkpoint record header");
    }
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint64_t extent = 0;
      if (!get_le(is, extent)) throw FormatError("truncated checkpoint extents");
      rec.shape.push_back(static_cast<std::int64_t>(extent));
    }
    rec.values.resize(static_cast<std::size_t>(shape_numel(rec.shape)));
    for (auto& v : rec.values) {
      std::uint32_t bits = 0;
      if (!get_le(is, bits)) throw FormatError("truncated checkpoint data for " + rec.name);
      v = std::bit_cast<float>(bits);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CheckpointRecord> snapshot(const ParameterList<float>& params) {
  std::vector<CheckpointRecord> records;
  records.reserve(params.size());
  for (const auto& p : params) {
    records.push_back({p.name, p.tensor.shape(),
                       std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return records;
}

void restore(ParameterList<float>& params, const std::vector<CheckpointRecord>& records) {
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& rec : records) by_name[rec.name] = &rec;
  for (auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw DimensionError("checkpoint shape mismatch for " + p.name + ": " +
                           shape_str(it->second->shape) + " vs " + shape_str(p.tensor.shape()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(),
              p.tensor.mutable_data().begin());
  }
}

}  // namespace ghostprobe
