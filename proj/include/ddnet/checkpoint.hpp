#ifndef DDNET_CHECKPOINT_HPP
#define DDNET_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "ddnet/tensor.hpp"

namespace ddnet {

// Flat binary checkpoint: magic "DDNT", version u32, parameter count u32,
// then per parameter: name length u32, UTF-8 name, rank u32, dims u64 each,
// little-endian f64 data. Round trips are bit-exact.

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(
    const std::string& path);

// Copy checkpoint values into existing tensors, matched by name; every name
// must be present on both sides with identical shapes.
void load_checkpoint_into(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace ddnet

#endif
