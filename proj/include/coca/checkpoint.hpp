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
#pragma once

#include "coca/tensor.hpp"

#include <string>
#include <vector>

namespace coca {

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// "COCA", version, count, then per tensor: u16 name length, name, u8 rank,
// u32 dims, float32 payload. A CRC32 of every preceding byte closes the file.
// All integers little-endian.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

std::uint32_t crc32_bytes(const void* data, std::size_t size);

// Reads/writes a whole file; IoError on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace coca
