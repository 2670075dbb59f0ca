#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "hurpipe/errors.hpp"

namespace hurpipe {

// Rolling FNV-1a/64 content digest. Used by the run manifest to detect any
// byte-level difference between reruns; not a cryptographic hash.
class Digest {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 1099511628211ull;
        }
    }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t v = h_;
        for (int i = 15; i >= 0; --i) {
            out[std::size_t(i)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

private:
    std::uint64_t h_ = 1469598103934665603ull;
};

inline std::string digest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for digest: " + path.string());
    Digest d;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        d.update(buf, std::size_t(in.gcount()));
    }
    return d.hex();
}

} // namespace hurpipe
