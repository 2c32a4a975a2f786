#pragma once

#include <string>
#include <utility>
#include <vector>

#include "phasekit/tensor.hpp"

namespace phasekit::ckpt {

// Single-file container: versioned header, embedded JSON metadata, and a
// named-tensor table. All integers and doubles are little-endian 64-bit.
struct Checkpoint {
    std::string meta_json;  // model config, optimizer step, anything else
    std::vector<std::pair<std::string, ag::Tensor>> tensors;

    const ag::Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

}  // namespace phasekit::ckpt
