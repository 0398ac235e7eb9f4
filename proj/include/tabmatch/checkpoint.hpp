#pragma once

// Checkpoint format: magic "STRB", format version, a JSON config blob, then
// per-tensor records (name, rank, dims, little-endian 32-bit floats) in
// sorted name order. Values are stored exactly, so save -> load -> score is
// bit-identical for f32 models.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabmatch/tensor.hpp"

namespace tabmatch {

using nlohmann::json;

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("unexpected end of checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in) {
    const std::uint64_t lo = read_u32(in);
    const std::uint64_t hi = read_u32(in);
    return lo | (hi << 32);
}

inline float read_f32(std::istream& in) {
    const std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'R', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& store, const json& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    detail::write_u32(out, kCheckpointVersion);
    const std::string cfg = config.dump();
    detail::write_u64(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_u64(out, store.raw().size());
    for (const auto& [name, param] : store.raw()) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(param.shape.size()));
        for (int d : param.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
        for (S v : param.value) detail::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

struct LoadedCheckpoint {
    json config;
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t cfg_len = detail::read_u64(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw IoError("unexpected end of checkpoint");
    LoadedCheckpoint out;
    try {
        out.config = json::parse(cfg);
    } catch (const json::exception& e) {
        throw IoError(std::string("bad checkpoint config: ") + e.what());
    }
    const std::uint64_t count = detail::read_u64(in);
    for (std::uint64_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = detail::read_u32(in);
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i)
            shape[i] = static_cast<int>(detail::read_u32(in));
        std::vector<float> data(static_cast<size_t>(numel_of(shape)));
        for (float& v : data) v = detail::read_f32(in);
        if (!in) throw IoError("unexpected end of checkpoint");
        out.tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return out;
}

// Overwrites parameter values in an already-shaped store.
template <typename S>
void apply_checkpoint(ParamStore<S>& store, const LoadedCheckpoint& ck) {
    if (ck.tensors.size() != store.raw().size())
        throw IoError("checkpoint parameter count mismatch");
    for (auto& [name, param] : store.raw()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw IoError("checkpoint missing parameter " + name);
        const auto& [shape, data] = it->second;
        if (shape != param.shape) throw IoError("checkpoint shape mismatch for " + name);
        for (size_t i = 0; i < data.size(); ++i) param.value[i] = static_cast<S>(data[i]);
    }
}

}  // namespace tabmatch
