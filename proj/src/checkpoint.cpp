#include "ddnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace ddnet {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(out, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i)
            put(out, static_cast<std::uint64_t>(t.dim(i)));
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    auto version = get<std::uint32_t>(in, path);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version) + " in " + path);
    auto count = get<std::uint32_t>(in, path);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t p = 0; p < count; ++p) {
        auto name_len = get<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
        auto rank = get<std::uint32_t>(in, path);
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < rank; ++d) {
            auto dim = get<std::uint64_t>(in, path);
            if (dim == 0 || dim > (1ull << 31))
                throw std::runtime_error("checkpoint: bad dimension in " + path);
            shape.push_back(static_cast<int>(dim));
        }
        Tensor t(std::move(shape));
        in.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void load_checkpoint_into(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& params) {
    auto stored = load_checkpoint(path);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : stored) by_name[name] = &t;
    if (stored.size() != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch (" +
                                 std::to_string(stored.size()) + " stored vs " +
                                 std::to_string(params.size()) + " expected)");
    for (const auto& [name, t] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name +
                                     "' in " + path);
        if (it->second->shape() != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name +
                                     "' in " + path);
        Tensor view = t;  // shared storage: writes land in the caller's tensor
        view.data() = it->second->data();
    }
}

}  // namespace ddnet
