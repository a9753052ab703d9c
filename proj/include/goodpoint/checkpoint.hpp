#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "goodpoint/model.hpp"

namespace goodpoint {

// Versioned binary container of named float tensors. Little-endian layout:
//   magic "GPCK", u32 container version, u32 flag count, flags as
//   length-prefixed key/value strings, u64 training step, u32 tensor count,
//   then per tensor: name, u8 dtype (0 = f32), u32 ndim, u64 dims,
//   column-major data.
// Readers accept any container whose version is <= theirs and ignore unknown
// flags, so new metadata stays forward-compatible.
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Depth-to-space channel ordering is part of the format contract.
inline constexpr const char* kChannelOrderTag = "cell-row-major";

struct Checkpoint {
  std::uint64_t step = 0;
  std::map<std::string, std::string> flags;  // channel_order, shape, ...
  struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
  };
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Network <-> container. Optimizer moments ride along as "opt.*" tensors.
Checkpoint to_checkpoint(const Network<float>& net, std::uint64_t step);
void add_tensor(Checkpoint& ckpt, const std::string& name, const Mat<float>& m);
void add_tensor(Checkpoint& ckpt, const std::string& name, const Vec<float>& v);

Network<float> network_from_checkpoint(const Checkpoint& ckpt);

// Human-readable summary used by checkpoint inspection.
std::string describe_checkpoint(const Checkpoint& ckpt);

}  // namespace goodpoint
