#pragma once

// File plumbing shared by every serializer: little-endian binary primitives,
// FNV-1a content hashing, and the line-based "key value" text format used by
// headers, metadata and configs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts unsupported");

namespace metricnav::io {

struct Fnv1a64 {
    uint64_t state = 0xcbf29ce484222325ull;

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 0x100000001b3ull;
        }
    }

    uint64_t digest() const { return state; }
};

inline uint64_t fnv1a64(const void* data, size_t n) {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
    return buf;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("unexpected end of binary stream");
}

template <typename T>
void write_span(std::ostream& os, const T* data, size_t n) {
    os.write(reinterpret_cast<const char*>(data), (std::streamsize)(n * sizeof(T)));
}

template <typename T>
void read_span(std::istream& is, T* data, size_t n) {
    is.read(reinterpret_cast<char*>(data), (std::streamsize)(n * sizeof(T)));
    if (!is) throw std::runtime_error("unexpected end of binary stream");
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline uint64_t hash_file(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

// "key value" lines; '#' starts a comment; blank lines ignored. Duplicate
// keys keep the last value but every line stays in order() for round-trips.
class KvFile {
  public:
    KvFile() = default;

    static KvFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open " + path);
        return parse_stream(f, path);
    }

    static KvFile parse_string(const std::string& text, const std::string& name = "<string>") {
        std::istringstream s(text);
        return parse_stream(s, name);
    }

    static KvFile parse_stream(std::istream& is, const std::string& name) {
        KvFile kv;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            size_t h = line.find('#');
            if (h != std::string::npos) line.erase(h);
            size_t b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            size_t e = line.find_last_not_of(" \t\r");
            std::string body = line.substr(b, e - b + 1);
            size_t sp = body.find_first_of(" \t=");
            if (sp == std::string::npos)
                throw std::runtime_error(name + ":" + std::to_string(lineno) +
                                         ": expected 'key value', got '" + body + "'");
            std::string key = body.substr(0, sp);
            size_t vb = body.find_first_not_of(" \t=", sp);
            std::string value = vb == std::string::npos ? "" : body.substr(vb);
            kv.set(key, value);
        }
        return kv;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it == index_.end()) {
            index_[key] = entries_.size();
            entries_.push_back({key, value});
        } else {
            entries_[it->second].second = value;
        }
    }

    void set_f(const std::string& key, double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        set(key, buf);
    }

    void set_i(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
    void set_u(const std::string& key, uint64_t v) { set(key, std::to_string(v)); }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw std::runtime_error("missing key '" + key + "'");
        return entries_[it->second].second;
    }

    std::string get_or(const std::string& key, const std::string& dflt) const {
        auto it = index_.find(key);
        return it == index_.end() ? dflt : entries_[it->second].second;
    }

    double get_f(const std::string& key) const { return std::stod(get(key)); }
    double get_f_or(const std::string& key, double d) const {
        return has(key) ? get_f(key) : d;
    }
    int64_t get_i(const std::string& key) const { return std::stoll(get(key)); }
    int64_t get_i_or(const std::string& key, int64_t d) const {
        return has(key) ? get_i(key) : d;
    }
    uint64_t get_u(const std::string& key) const { return std::stoull(get(key)); }
    uint64_t get_u_or(const std::string& key, uint64_t d) const {
        return has(key) ? get_u(key) : d;
    }

    const std::vector<std::pair<std::string, std::string>>& order() const { return entries_; }

    std::string to_string() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k;
            out += ' ';
            out += v;
            out += '\n';
        }
        return out;
    }

    void write_file(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << to_string();
    }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, size_t> index_;
};

inline void ensure_dir(const std::string& path) {
    std::filesystem::create_directories(path);
}

}  // namespace metricnav::io
