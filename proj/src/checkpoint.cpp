#include "pretram/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "pretram/errors.hpp"

namespace pretram {

namespace {

constexpr char kMagic[8] = {'P', 'T', 'M', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError(path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  write_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    write_u32(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u32(out, static_cast<uint32_t>(t.dims.size()));
    size_t numel = 1;
    for (int d : t.dims) {
      write_u32(out, static_cast<uint32_t>(d));
      numel *= static_cast<size_t>(d);
    }
    if (numel != t.values.size()) throw IoError("checkpoint tensor '" + t.name + "' has inconsistent dims");
    // float32 little-endian; this code targets little-endian hosts
    out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path + ": not a checkpoint file (bad magic)");
  const uint32_t count = read_u32(in, path);
  std::vector<NamedTensor> tensors(count);
  for (NamedTensor& t : tensors) {
    const uint32_t name_len = read_u32(in, path);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const uint32_t rank = read_u32(in, path);
    t.dims.resize(rank);
    size_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      t.dims[i] = static_cast<int>(read_u32(in, path));
      numel *= static_cast<size_t>(t.dims[i]);
    }
    t.values.resize(numel);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(numel * 4));
    if (!in) throw IoError(path + ": truncated checkpoint");
  }
  return tensors;
}

}  // namespace pretram
