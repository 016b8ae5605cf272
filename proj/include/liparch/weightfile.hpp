#pragma once

#include <string>
#include <utility>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/json_io.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

// Flat weight container: "LIPW", u32 format version, u64 manifest length,
// the manifest JSON, zero padding to an 8-byte boundary, then every tensor
// as little-endian 64-bit floats at its manifest offset. Offsets are
// 8-byte aligned and ascend densely in tensor order, so saving a loaded
// model reproduces the input bytes exactly.
struct WeightModel {
  std::vector<std::pair<std::string, Matrix>> tensors;  // manifest order
  json blocks = json::array();                          // block descriptors
};

WeightModel load_weights(const std::string& path);
void save_weights(const std::string& path, const WeightModel& model);

// Instantiates the descriptor list. Kinds: linear, identity, mlp2,
// layer_norm, self_attention, multi_head_self_attention and the two
// transformer arrangements, whose roles are dotted ("ln1.gamma",
// "mlp.w1", "attn.wq"); multi-head roles are indexed ("wq0", "wk0", ...).
std::vector<Block> build_blocks(const WeightModel& model);

// Descriptors plus tensors ("b<index>.<role>") for already-built blocks of
// the supported kinds; composites must be flat transformer layers.
WeightModel model_from_blocks(const std::vector<Block>& blocks);

// Loads and instantiates, then reports counts and payload size. Malformed
// files throw ValidationError naming the offending tensor or block.
json validate_weights(const std::string& path);

}  // namespace liparch
