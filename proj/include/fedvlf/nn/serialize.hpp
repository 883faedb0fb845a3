#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "fedvlf/nn/params.hpp"

namespace fedvlf::nn {

// Parameter file, little-endian:
//   "VLFM"  u32 version
//   u32 input, hidden, embed, dense, output, vocab
//   f32 payload: every block of block_layout() in order, each column-major
inline constexpr std::size_t kParamHeaderBytes = 4 + 4 + 6 * 4;

inline std::size_t payload_bytes(const ModelDims& dims) { return dims.parameter_count() * sizeof(float); }
inline std::size_t serialized_bytes(const ModelDims& dims) { return kParamHeaderBytes + payload_bytes(dims); }

std::string serialize_params(const ModelParams<float>& params);
// Throws FormatError on bad magic, version, dimensions or length; never
// returns a partially filled model.
ModelParams<float> deserialize_params(const std::string& bytes);

void save_params(const std::string& path, const ModelParams<float>& params);
ModelParams<float> load_params(const std::string& path);

}  // namespace fedvlf::nn
