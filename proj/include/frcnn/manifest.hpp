#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "frcnn/config.hpp"

namespace frcnn {

namespace detail {

// SHA-1 over a byte stream; enough for content-addressing run inputs.
class Sha1 {
public:
    Sha1() { reset(); }

    void reset() {
        h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
        buf_len_ = 0;
        total_ = 0;
    }

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        total_ += len;
        while (len > 0) {
            const std::size_t take = std::min<std::size_t>(64 - buf_len_, len);
            std::copy(p, p + take, buf_.begin() + static_cast<std::ptrdiff_t>(buf_len_));
            buf_len_ += take;
            p += take;
            len -= take;
            if (buf_len_ == 64) {
                process(buf_.data());
                buf_len_ = 0;
            }
        }
    }

    std::string hex_digest() {
        const std::uint64_t bits = total_ * 8;
        const std::uint8_t pad = 0x80;
        update(&pad, 1);
        const std::uint8_t zero = 0;
        while (buf_len_ != 56) update(&zero, 1);
        std::array<std::uint8_t, 8> len_be;
        for (int i = 0; i < 8; ++i) len_be[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
        // bypass total_ bookkeeping for the trailer
        std::copy(len_be.begin(), len_be.end(), buf_.begin() + 56);
        process(buf_.data());
        std::ostringstream os;
        os << std::hex << std::setfill('0');
        for (std::uint32_t h : h_) os << std::setw(8) << h;
        return os.str();
    }

private:
    static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

    void process(const std::uint8_t* block) {
        std::array<std::uint32_t, 80> w;
        for (int i = 0; i < 16; ++i)
            w[static_cast<std::size_t>(i)] = (std::uint32_t(block[i * 4]) << 24) | (std::uint32_t(block[i * 4 + 1]) << 16) |
                                             (std::uint32_t(block[i * 4 + 2]) << 8) | std::uint32_t(block[i * 4 + 3]);
        for (std::size_t i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (std::size_t i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    std::array<std::uint32_t, 5> h_;
    std::array<std::uint8_t, 64> buf_;
    std::size_t buf_len_ = 0;
    std::uint64_t total_ = 0;
};

}  // namespace detail

inline std::string sha1_hex(const std::string& bytes) {
    detail::Sha1 h;
    h.update(bytes.data(), bytes.size());
    return h.hex_digest();
}

// Content hash over a set of input files (sorted by path for stability).
inline std::string hash_inputs(std::vector<std::string> paths) {
    std::sort(paths.begin(), paths.end());
    detail::Sha1 h;
    for (const std::string& p : paths) {
        h.update(p.data(), p.size());
        std::ifstream is(p, std::ios::binary);
        if (!is.good()) continue;  // absent inputs hash as name-only
        char buf[65536];
        while (is.read(buf, sizeof buf) || is.gcount() > 0)
            h.update(buf, static_cast<std::size_t>(is.gcount()));
    }
    return h.hex_digest();
}

// Written before a command starts work; re-running with the same manifest in
// reference mode reproduces the outputs bitwise.
struct RunManifest {
    std::string command;
    RunConfig config;
    std::uint64_t seed = 0;
    std::string inputs_hash;
    std::vector<std::string> output_paths;

    nlohmann::json to_json() const {
        nlohmann::json cfg = nlohmann::json::object();
        for (const auto& [k, v] : config.entries()) cfg[k] = v;
        return nlohmann::json{{"command", command},
                              {"config", cfg},
                              {"seed", seed},
                              {"inputs_hash", inputs_hash},
                              {"outputs", output_paths}};
    }

    void write(const std::string& path) const {
        std::ofstream os(path);
        require(os.good(), "cannot write manifest: " + path);
        os << to_json().dump(2) << "\n";
        require(os.good(), "manifest write failed: " + path);
    }
};

}  // namespace frcnn
