#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "frcnn/tensor.hpp"

namespace frcnn {

// Flat binary checkpoint: "FRCN1" magic, u32 parameter count, then per
// parameter u32 name length, UTF-8 name, u32 rank, u32 extents, f64 data.
// All integers and floats little-endian.

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace detail

constexpr char kCheckpointMagic[5] = {'F', 'R', 'C', 'N', '1'};

inline void save_checkpoint(const std::string& path, const std::vector<Tensor>& params) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 5);
    detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const Tensor& p : params) {
        require(!p.name().empty(), "checkpoint parameters must be named");
        detail::write_u32(os, static_cast<std::uint32_t>(p.name().size()));
        os.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
        detail::write_u32(os, static_cast<std::uint32_t>(p.rank()));
        for (std::size_t d = 0; d < p.rank(); ++d)
            detail::write_u32(os, static_cast<std::uint32_t>(p.extent(d)));
        os.write(reinterpret_cast<const char*>(p.data().data()),
                 static_cast<std::streamsize>(p.size() * sizeof(Scalar)));
    }
    require(os.good(), "checkpoint write failed: " + path);
}

inline std::vector<Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open checkpoint: " + path);
    char magic[5];
    is.read(magic, 5);
    require(is.good() && std::memcmp(magic, kCheckpointMagic, 5) == 0,
            "bad checkpoint magic in " + path);
    const std::uint32_t count = detail::read_u32(is);
    std::vector<Tensor> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = detail::read_u32(is);
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = detail::read_u32(is);
            n *= shape[d];
        }
        std::vector<Scalar> data(n);
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(Scalar)));
        require(is.good(), "truncated checkpoint: " + path);
        Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
        t.set_name(std::move(name));
        params.push_back(std::move(t));
    }
    return params;
}

}  // namespace frcnn
