#include "mmk/weight_store.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace mmk {

void WeightStore::insert(std::string name, Tensor t) {
    if (index_.count(name)) {
        throw std::runtime_error("weight store: duplicate name '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
}

const Tensor* WeightStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor& WeightStore::get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::runtime_error("weight store: missing name '" + name + "'");
    return *t;
}

namespace {

constexpr char kMagic[4] = {'M', 'M', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(char* dst, std::streamsize n) {
        is_.read(dst, n);
        if (is_.gcount() != n) throw std::runtime_error("weight file: truncated");
    }
    std::uint16_t u16() {
        unsigned char b[2];
        bytes(reinterpret_cast<char*>(b), 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::uint8_t u8() {
        unsigned char b;
        bytes(reinterpret_cast<char*>(&b), 1);
        return b;
    }
    double f64() {
        unsigned char b[8];
        bytes(reinterpret_cast<char*>(b), 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return std::bit_cast<double>(bits);
    }

private:
    std::istream& is_;
};

}  // namespace

void save_weights(const WeightStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("weight file: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store.entries()) {
        if (name.size() > 0xffff) throw std::runtime_error("weight file: name too long: " + name);
        for (char c : name) {
            if (static_cast<unsigned char>(c) > 0x7f) {
                throw std::runtime_error("weight file: non-ASCII name: " + name);
            }
        }
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.extent(i)));
        for (double v : t.data()) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("weight file: write failed for '" + path + "'");
}

WeightStore load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("weight file: cannot open '" + path + "'");
    Reader r(is);
    char magic[4];
    r.bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw std::runtime_error("weight file: bad magic (not a weight file)");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("weight file: unsupported version " + std::to_string(version) +
                                 " (expected " + std::to_string(kVersion) + ")");
    }
    const std::uint32_t count = r.u32();
    WeightStore store;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        for (char c : name) {
            if (static_cast<unsigned char>(c) > 0x7f) {
                throw std::runtime_error("weight file: non-ASCII name in entry " + std::to_string(e));
            }
        }
        const std::uint8_t rank = r.u8();
        if (rank < 1 || rank > 4) {
            throw std::runtime_error("weight file: entry '" + name + "' has invalid rank " +
                                     std::to_string(rank));
        }
        Shape shape(rank);
        std::int64_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<std::int64_t>(r.u32());
            numel *= shape[i];
        }
        std::vector<double> values(static_cast<std::size_t>(numel));
        for (auto& v : values) v = r.f64();
        store.insert(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return store;
}

}  // namespace mmk
