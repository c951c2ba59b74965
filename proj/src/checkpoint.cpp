/*
 * Copyright 2026 The coca-desk Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "coca/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace coca {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'O', 'C', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const char* take(std::size_t n) {
    if (n > limit_ - pos_) throw IoError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t position() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_bytes(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    if (nt.name.empty() || nt.name.size() > 0xffff) throw Error("checkpoint: bad tensor name length");
    if (nt.tensor.rank() > 0xff) throw Error("checkpoint: rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(nt.name.size()));
    out += nt.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(nt.tensor.rank()));
    for (Index d : nt.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(nt.tensor.matrix().data()),
               static_cast<std::size_t>(nt.tensor.size()) * sizeof(float));
  }
  put<std::uint32_t>(out, crc32_bytes(out.data(), out.size()));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16) throw IoError("checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a COCA checkpoint");
  Reader r(bytes, body);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  if (crc32_bytes(bytes.data(), body) != stored) throw IoError("checkpoint CRC mismatch");
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const auto len = r.get<std::uint16_t>();
    nt.name.assign(r.take(len), len);
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(r.get<std::uint32_t>()));
    if (rank == 0 || shape_numel(shape) <= 0) throw IoError("checkpoint tensor " + nt.name + " has an empty shape");
    nt.tensor = Tensor<float>(shape);
    const std::size_t n = static_cast<std::size_t>(nt.tensor.size()) * sizeof(float);
    std::memcpy(nt.tensor.matrix().data(), r.take(n), n);
    out.push_back(std::move(nt));
  }
  if (r.position() != body) throw IoError("checkpoint has trailing bytes");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  // Write then rename so an interrupted save never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  write_file(tmp, encode_checkpoint(tensors));
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace coca
