#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ink {

// Exit-code-mapped error categories (see tools/main.cpp).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for weight hashes, per-sample seeds and sub-seed derivation.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t buf[2] = {seed, salt};
    return fnv1a(buf, sizeof(buf));
}

std::string to_hex(uint64_t v);

}  // namespace ink
