#include "urbanverse/io/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"
#include "urbanverse/common.hpp"

namespace uv::io {

namespace {

constexpr char kMagic[4] = {'U', 'V', 'C', 'K'};
constexpr int kVersion = 1;

size_t numel(const std::vector<int64_t>& shape) {
    size_t n = 1;
    for (int64_t d : shape) n *= static_cast<size_t>(d);
    return n;
}

}  // namespace

const NamedArray& Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw DataError("checkpoint has no array named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(),
                       [&](const NamedArray& a) { return a.name == name; });
}

void saveCheckpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["component"] = ck.component;
    manifest["arrays"] = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& a : ck.arrays) {
        if (a.data.size() != numel(a.shape)) {
            throw DataError("array '" + a.name + "' has " + std::to_string(a.data.size()) +
                            " values but shape implies " + std::to_string(numel(a.shape)));
        }
        nlohmann::json d;
        d["name"] = a.name;
        d["shape"] = a.shape;
        d["dtype"] = "f32";
        d["offset"] = offset;
        manifest["arrays"].push_back(d);
        offset += a.data.size() * sizeof(float);
    }
    std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(kMagic, 4);
    uint32_t len = static_cast<uint32_t>(text.size());
    unsigned char lenBytes[4] = {
        static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>((len >> 8) & 0xff),
        static_cast<unsigned char>((len >> 16) & 0xff), static_cast<unsigned char>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenBytes), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ck.arrays) {
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    }
    if (!out.flush()) throw DataError("failed writing " + path);
}

Checkpoint loadCheckpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError(path + " is not a checkpoint file");
    }
    unsigned char lenBytes[4];
    in.read(reinterpret_cast<char*>(lenBytes), 4);
    if (!in) throw DataError(path + " is truncated");
    uint32_t len = static_cast<uint32_t>(lenBytes[0]) | (static_cast<uint32_t>(lenBytes[1]) << 8) |
                   (static_cast<uint32_t>(lenBytes[2]) << 16) |
                   (static_cast<uint32_t>(lenBytes[3]) << 24);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw DataError(path + " is truncated");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + " manifest is not valid JSON: " + e.what());
    }
    if (!manifest.contains("version") || manifest["version"].get<int>() != kVersion) {
        throw DataError(path + " has unsupported checkpoint version");
    }

    Checkpoint ck;
    ck.version = kVersion;
    ck.component = manifest.value("component", "");
    uint64_t expected = 0;
    for (const auto& d : manifest["arrays"]) {
        NamedArray a;
        a.name = d["name"].get<std::string>();
        a.shape = d["shape"].get<std::vector<int64_t>>();
        std::string dtype = d["dtype"].get<std::string>();
        if (dtype != "f32") throw DataError(path + ": unsupported dtype '" + dtype + "'");
        uint64_t offset = d["offset"].get<uint64_t>();
        if (offset != expected) {
            throw DataError(path + ": array '" + a.name + "' offset " + std::to_string(offset) +
                            " does not follow the previous array (expected " +
                            std::to_string(expected) + ")");
        }
        a.data.resize(numel(a.shape));
        expected += a.data.size() * sizeof(float);
        ck.arrays.push_back(std::move(a));
    }

    for (auto& a : ck.arrays) {
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
        if (!in) throw DataError(path + " payload is shorter than the manifest promises");
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError(path + " payload is longer than the manifest promises");
    return ck;
}

Checkpoint paramsToCheckpoint(const std::string& component, const num::ParamList<float>& params) {
    Checkpoint ck;
    ck.component = component;
    for (const auto& p : params) {
        NamedArray a;
        a.name = p.name;
        a.shape = p.tensor.shape();
        a.data = p.tensor.value();
        ck.arrays.push_back(std::move(a));
    }
    return ck;
}

void checkpointToParams(const Checkpoint& ck, const num::ParamList<float>& params) {
    std::set<std::string> registry, stored;
    for (const auto& p : params) registry.insert(p.name);
    for (const auto& a : ck.arrays) stored.insert(a.name);
    if (registry != stored) {
        std::string msg = "checkpoint arrays do not match the parameter registry;";
        for (const auto& n : registry) {
            if (!stored.count(n)) msg += " missing '" + n + "'";
        }
        for (const auto& n : stored) {
            if (!registry.count(n)) msg += " unexpected '" + n + "'";
        }
        throw DataError(msg);
    }
    for (const auto& p : params) {
        const auto& a = ck.find(p.name);
        if (a.shape != p.tensor.shape()) {
            throw DataError("checkpoint array '" + p.name + "' has shape " + fmtShape(a.shape) +
                            ", expected " + fmtShape(p.tensor.shape()));
        }
        num::TensorT<float> handle = p.tensor;  // shares storage with the registry entry
        handle.value() = a.data;
    }
}

}  // namespace uv::io
