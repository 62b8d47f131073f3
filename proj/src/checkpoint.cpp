#include "evmf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace evmf {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const ParamRegistry& reg, const std::string& path) {
    std::string buf;
    buf += "EVMF";
    put_u32(buf, kFormatVersion);
    put_u32(buf, static_cast<uint32_t>(reg.size()));
    for (const auto& p : reg.items()) {
        if (p.name.size() > 0xffff) throw CheckpointError("parameter name too long");
        put_u16(buf, static_cast<uint16_t>(p.name.size()));
        buf += p.name;
        const Shape& s = p.tensor.shape();
        buf.push_back(static_cast<char>(s.size()));
        for (int e : s) put_u32(buf, static_cast<uint32_t>(e));
        for (double v : p.tensor.values()) put_f64(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("write failed: " + path);
}

void load_checkpoint(ParamRegistry& reg, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(buf);
    if (r.bytes(4) != "EVMF") throw CheckpointError("bad magic in " + path);
    const uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32();
    std::unordered_set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u16());
        const int rank = r.u8();
        Shape s(static_cast<size_t>(rank));
        for (int k = 0; k < rank; ++k) s[static_cast<size_t>(k)] = static_cast<int>(r.u32());
        const int64_t n = shape_numel(s);
        if (!reg.has(name))
            throw CheckpointError("checkpoint parameter '" + name +
                                  "' does not exist in this model");
        Parameter& p = reg.at(name);
        if (p.tensor.shape() != s)
            throw CheckpointError("shape mismatch for '" + name + "': checkpoint " +
                                  shape_str(s) + " vs model " + shape_str(p.tensor.shape()));
        auto& vals = p.tensor.values();
        for (int64_t k = 0; k < n; ++k) vals[static_cast<size_t>(k)] = r.f64();
        seen.insert(name);
    }
    for (const auto& p : reg.items())
        if (!seen.count(p.name))
            throw CheckpointError("checkpoint missing parameter '" + p.name + "'");
}

}  // namespace evmf
