#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace figpriv {

// Error classes map onto the CLI exit-code contract:
// ConfigError -> 2, DataError -> 3, TransportError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline bool& warnings_enabled() {
    static bool enabled = true;
    return enabled;
}
inline std::mutex& warn_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

inline void set_warnings_enabled(bool on) { detail::warnings_enabled() = on; }

inline void warn(const std::string& message) {
    if (!detail::warnings_enabled()) return;
    std::lock_guard<std::mutex> lock(detail::warn_mutex());
    std::fprintf(stderr, "[figpriv] warning: %s\n", message.c_str());
}

// Canonical node-id form: trimmed, lowercased, internal whitespace collapsed
// to single spaces. Table names and graph names join through this.
inline std::string normalize_id(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

inline uint64_t fnv1a64(const void* data, size_t size, uint64_t state = 0xcbf29ce484222325ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        state ^= bytes[i];
        state *= 0x100000001b3ULL;
    }
    return state;
}

inline std::string to_hex(uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

inline std::string base64_encode(const unsigned char* data, size_t size) {
    static const char* table =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((size + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < size; i += 3) {
        uint32_t n = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8) | data[i + 2];
        out.push_back(table[(n >> 18) & 63]);
        out.push_back(table[(n >> 12) & 63]);
        out.push_back(table[(n >> 6) & 63]);
        out.push_back(table[n & 63]);
    }
    if (i + 1 == size) {
        uint32_t n = uint32_t(data[i]) << 16;
        out.push_back(table[(n >> 18) & 63]);
        out.push_back(table[(n >> 12) & 63]);
        out += "==";
    } else if (i + 2 == size) {
        uint32_t n = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8);
        out.push_back(table[(n >> 18) & 63]);
        out.push_back(table[(n >> 12) & 63]);
        out.push_back(table[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::string base64_encode(const std::vector<unsigned char>& data) {
    return base64_encode(data.data(), data.size());
}

}  // namespace figpriv
