#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urbanverse/numerics/tensor.hpp"

namespace uv::io {

struct NamedArray {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;  // row-major
};

struct Checkpoint {
    int version = 1;
    std::string component;
    std::vector<NamedArray> arrays;

    const NamedArray& find(const std::string& name) const;
    bool has(const std::string& name) const;
};

// Binary container: magic, little-endian manifest length, JSON manifest
// (version, component, array descriptors with byte offsets), then the flat
// 32-bit payload. Round trips bit-exactly.
void saveCheckpoint(const std::string& path, const Checkpoint& ck);
Checkpoint loadCheckpoint(const std::string& path);

// Bridges to the parameter registry of a model. Saving snapshots every named
// tensor; loading writes values back and insists the checkpoint carries
// exactly the registry's names and shapes, so a stale or foreign file is
// rejected rather than half-applied.
Checkpoint paramsToCheckpoint(const std::string& component, const num::ParamList<float>& params);
void checkpointToParams(const Checkpoint& ck, const num::ParamList<float>& params);

}  // namespace uv::io
