// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container (little-endian):
//
//   "LOCA"  u32 version
//   u32 config_bytes, then config_bytes of:
//       u32 count, count × { u32 name_len, name, u8 tag, value }
//       tag 0: u64 value; tag 1: u32 len + UTF-8 text
//   u32 tensor_count, tensor_count × { u32 name_len, name, u64 rows, u64 cols,
//                                      rows·cols float64, row-major }
//
// Backbones and memories share the container; memory tensors are prefixed
// "locas.".
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/model.hpp"

namespace locas {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using ConfigValue = std::variant<std::uint64_t, std::string>;

struct Container {
    std::vector<std::pair<std::string, ConfigValue>> config;
    std::vector<std::pair<std::string, Matrix>> tensors;

    const ConfigValue* find_config(const std::string& name) const;
    const Matrix* find_tensor(const std::string& name) const;
};

std::string encode_container(const Container& c);
// Throws FormatError on bad magic, version mismatch or truncation.
Container decode_container(const std::string& bytes);

void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path);
Backbone load_checkpoint(const std::filesystem::path& path);

void save_memory(const GluMemory& memory, const std::filesystem::path& path);
void save_memory(const MlpMemory& memory, const std::filesystem::path& path);
GluMemory load_glu_memory(const std::filesystem::path& path);
MlpMemory load_mlp_memory(const std::filesystem::path& path);

}  // namespace locas
