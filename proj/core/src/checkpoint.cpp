// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace atlasgs {

namespace {

template <typename T>
void put(std::ostream &os, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get(std::istream &is, const std::filesystem::path &path) {
    static_assert(std::is_integral_v<T>);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == EOF) {
            throw CheckpointError(path.string() + ": truncated checkpoint");
        }
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

} // namespace

void save_tensors(const std::filesystem::path &path, const NamedTensors &tensors, DType dtype) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw CheckpointError(tmp.string() + ": cannot open for writing");
        }
        os.write("ATLG", 4);
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
        for (const auto &[name, t] : tensors) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
            put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
            for (auto e : t.shape()) {
                put<std::uint64_t>(os, e);
            }
            for (double v : t.values()) {
                if (dtype == DType::f32) {
                    put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
                } else {
                    put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
                }
            }
        }
        if (!os) {
            throw CheckpointError(tmp.string() + ": write failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

NamedTensors load_tensors(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError(path.string() + ": cannot open checkpoint");
    }
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ATLG", 4) != 0) {
        throw CheckpointError(path.string() + ": bad magic, not an ATLG container");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
    }
    const auto count = get<std::uint32_t>(is, path);
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = get<std::uint32_t>(is, path);
        if (len > (1u << 20)) {
            throw CheckpointError(path.string() + ": corrupt tensor name length");
        }
        std::string name(len, '\0');
        is.read(name.data(), len);
        const auto code = get<std::uint8_t>(is, path);
        if (code != 1 && code != 2) {
            throw CheckpointError(path.string() + ": unknown dtype code " + std::to_string(code) +
                                  " for tensor '" + name + "'");
        }
        const auto rank = get<std::uint32_t>(is, path);
        if (rank > 16) {
            throw CheckpointError(path.string() + ": corrupt rank for tensor '" + name + "'");
        }
        Shape shape(rank);
        for (auto &e : shape) {
            e = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        }
        std::vector<double> values(shape_numel(shape));
        for (auto &v : values) {
            if (code == 1) {
                v = std::bit_cast<float>(get<std::uint32_t>(is, path));
            } else {
                v = std::bit_cast<double>(get<std::uint64_t>(is, path));
            }
        }
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return out;
}

const Tensor &find_tensor(const NamedTensors &tensors, const std::string &name) {
    for (const auto &[n, t] : tensors) {
        if (n == name) {
            return t;
        }
    }
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

bool has_tensor(const NamedTensors &tensors, const std::string &name) {
    for (const auto &[n, t] : tensors) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

void load_params(ParamStore &store, const NamedTensors &tensors, const std::string &prefix) {
    for (auto &[name, param] : store.entries()) {
        const Tensor &src = find_tensor(tensors, prefix + name);
        if (src.shape() != param.shape()) {
            throw CheckpointError("parameter '" + name + "' has shape " +
                                  shape_string(param.shape()) + " but checkpoint stores " +
                                  shape_string(src.shape()));
        }
        std::copy(src.values().begin(), src.values().end(), param.mutable_values().begin());
    }
}

NamedTensors export_params(const ParamStore &store, const std::string &prefix) {
    NamedTensors out;
    for (const auto &[name, t] : store.entries()) {
        out.emplace_back(prefix + name, t);
    }
    return out;
}

} // namespace atlasgs
