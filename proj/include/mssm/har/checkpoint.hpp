#ifndef MSSM_HAR_CHECKPOINT_HPP
#define MSSM_HAR_CHECKPOINT_HPP

// Flat binary checkpoint:
//   "MSSM1" | u64 count | count x (u64 nameLen, name, u64 rank, rank x u64 dim, prod(dims) x f64)
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace mssm::har {

inline constexpr char kCheckpointMagic[] = "MSSM1";

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in)
{
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

struct Entry {
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const ModelParams& p)
{
    std::vector<std::pair<std::string, detail::Entry>> entries;
    auto collect = [&](const std::string& name, const std::vector<double>& v, const ModelParams::Shape& shape) {
        entries.push_back({name, {shape, v}});
    };
    ModelParams::visit(p, collect);
    ModelParams::visit_buffers(p, collect);
    out.write(kCheckpointMagic, 5);
    detail::put_u64(out, entries.size());
    for (const auto& [name, e] : entries) {
        detail::put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u64(out, e.shape.size());
        for (std::size_t d : e.shape) detail::put_u64(out, d);
        for (double v : e.values) detail::put_f64(out, v);
    }
}

inline void save_checkpoint(const std::string& path, const ModelParams& p)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, p);
}

/// Fills `into` (already shaped by its config) from a checkpoint; every tensor must be present with a matching shape.
inline void load_checkpoint(std::istream& in, ModelParams& into)
{
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
        throw DataError("checkpoint: bad magic (expected MSSM1)");
    }
    const std::uint64_t count = detail::get_u64(in);
    std::map<std::string, detail::Entry> entries;
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::uint64_t len = detail::get_u64(in);
        if (len > 4096) throw DataError("checkpoint: implausible name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint: truncated file");
        detail::Entry e;
        const std::uint64_t rank = detail::get_u64(in);
        if (rank > 8) throw DataError("checkpoint: implausible rank for '" + name + "'");
        std::size_t total = 1;
        for (std::uint64_t r = 0; r < rank; ++r) {
            e.shape.push_back(detail::get_u64(in));
            total *= e.shape.back();
        }
        if (total > (std::size_t{1} << 32)) throw DataError("checkpoint: implausible size for '" + name + "'");
        e.values.resize(total);
        for (double& v : e.values) v = detail::get_f64(in);
        entries[name] = std::move(e);
    }
    auto fill = [&](const std::string& name, std::vector<double>& v, const ModelParams::Shape& shape) {
        const auto it = entries.find(name);
        if (it == entries.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != shape) throw DataError("checkpoint: shape mismatch for '" + name + "'");
        v = it->second.values;
    };
    ModelParams::visit(into, fill);
    ModelParams::visit_buffers(into, fill);
}

inline void load_checkpoint(const std::string& path, ModelParams& into)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    load_checkpoint(in, into);
}

}  // namespace mssm::har

#endif  // MSSM_HAR_CHECKPOINT_HPP
