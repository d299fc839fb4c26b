// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container:
//   "ATLG" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | u8 dtype | u32 rank | u64 extents[rank] | payload }
// All integers and payload values are little-endian. dtype 1 = f32, 2 = f64.

#pragma once

#include "atlasgs/nn.hpp"
#include "atlasgs/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atlasgs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes to a temporary sibling file and renames it into place.
void save_tensors(const std::filesystem::path &path, const NamedTensors &tensors,
                  DType dtype = DType::f64);
NamedTensors load_tensors(const std::filesystem::path &path);

/// Copies every stored tensor whose name matches a parameter into the store.
/// Throws when a parameter is missing from the file or a shape differs.
void load_params(ParamStore &store, const NamedTensors &tensors, const std::string &prefix = "");
NamedTensors export_params(const ParamStore &store, const std::string &prefix = "");

/// Lookup helper; throws CheckpointError naming the missing tensor.
const Tensor &find_tensor(const NamedTensors &tensors, const std::string &name);
bool has_tensor(const NamedTensors &tensors, const std::string &name);

} // namespace atlasgs
