#include "daf/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <vector>

#include "daf/error.hpp"

namespace daf::nn {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t x) {
    char b[4] = {char(x & 0xff), char((x >> 8) & 0xff), char((x >> 16) & 0xff),
                 char((x >> 24) & 0xff)};
    os.write(b, 4);
}

void put_f32(std::ostream& os, float x) { put_u32(os, std::bit_cast<uint32_t>(x)); }

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw SchemaError("parameter file truncated");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void save_params(const ParamStore& ps, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("DAFW", 4);
    put_u32(os, kVersion);
    put_u32(os, uint32_t(ps.size()));
    for (const auto& name : ps.names()) {
        const Tensor& t = ps.at(name);
        put_u32(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        put_u32(os, uint32_t(t.shape.size()));
        for (int d : t.shape) put_u32(os, uint32_t(d));
        for (long i = 0; i < t.size(); ++i) put_f32(os, float(t[i]));
    }
    if (!os) throw IoError("write failed: " + path);
}

ParamStore load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DAFW")
        throw FormatError("not a parameter file: " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported parameter file version " + std::to_string(version));
    const uint32_t count = get_u32(is);
    ParamStore ps;
    for (uint32_t k = 0; k < count; ++k) {
        const uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw SchemaError("parameter file truncated");
        const uint32_t rank = get_u32(is);
        if (rank > 8) throw SchemaError("implausible tensor rank");
        std::vector<int> shape(rank);
        long numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = int(get_u32(is));
            numel *= shape[d];
        }
        Tensor t(shape);
        for (long i = 0; i < numel; ++i)
            t[i] = double(std::bit_cast<float>(get_u32(is)));
        ps.add(name, std::move(t));
    }
    return ps;
}

void quantize_f32(ParamStore& ps) {
    for (const auto& name : ps.names()) {
        Tensor& t = ps.at(name);
        for (long i = 0; i < t.size(); ++i) t[i] = double(float(t[i]));
    }
}

void set_meta(ParamStore& ps, const std::string& name, const std::string& value) {
    Tensor t({int(value.size())});
    for (size_t i = 0; i < value.size(); ++i) t[long(i)] = double(uint8_t(value[i]));
    if (ps.has(name))
        ps.at(name) = std::move(t);
    else
        ps.add(name, std::move(t));
}

std::string get_meta(const ParamStore& ps, const std::string& name) {
    if (!ps.has(name)) return "";
    const Tensor& t = ps.at(name);
    std::string s;
    for (long i = 0; i < t.size(); ++i) s.push_back(char(uint8_t(t[i])));
    return s;
}

}  // namespace daf::nn
