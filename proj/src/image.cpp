#include "daf/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "daf/rasterops.hpp"

namespace daf {

namespace {

const uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_be32(out, uint32_t(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
    put_be32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed for " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed for " + path);
}

Image decode_ppm(const std::vector<uint8_t>& bytes) {
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            char ch = char(bytes[pos]);
            if (ch == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
                ++pos;
            } else {
                break;
            }
        }
        size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') ++pos;
        if (start == pos) throw FormatError("truncated ppm header");
        return std::string(bytes.begin() + long(start), bytes.begin() + long(pos));
    };

    if (next_token() != "P6") throw FormatError("not a P6 ppm");
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0) throw FormatError("bad ppm dimensions");
    if (maxval != 255) throw FormatError("unsupported ppm bit depth (maxval " + std::to_string(maxval) + ")");
    ++pos;  // single whitespace after maxval
    size_t need = size_t(w) * h * 3;
    if (bytes.size() - pos < need) throw FormatError("truncated ppm payload");

    Image img(h, w, 3);
    for (size_t i = 0; i < need; ++i) img.data[i] = bytes[pos + i] / 255.0;
    return img;
}

}  // namespace

Image decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw FormatError("missing png signature");

    int w = 0, h = 0, depth = 0, color = 0, interlace = 0;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;

    size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw FormatError("truncated png chunk");
        const uint8_t* type = &bytes[pos + 4];
        const uint8_t* data = &bytes[pos + 8];
        uint32_t crc_have = be32(&bytes[pos + 8 + len]);
        uint32_t crc_want = uint32_t(crc32(0, type, 4 + len));
        if (crc_have != crc_want) throw FormatError("png chunk crc mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError("bad IHDR length");
            w = int(be32(data));
            h = int(be32(data + 4));
            depth = data[8];
            color = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend) throw FormatError("png missing IHDR/IEND");
    if (w <= 0 || h <= 0) throw FormatError("bad png dimensions");
    if (depth != 8) throw FormatError("unsupported png bit depth " + std::to_string(depth));
    if (color != 0 && color != 2) throw FormatError("unsupported png color type " + std::to_string(color));
    if (interlace != 0) throw FormatError("interlaced png not supported");

    const int ch = color == 2 ? 3 : 1;
    const size_t stride = size_t(w) * ch;
    uLongf raw_len = uLongf(size_t(h) * (stride + 1));
    std::vector<uint8_t> raw(raw_len);
    int zrc = uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size()));
    if (zrc != Z_OK || raw_len != size_t(h) * (stride + 1)) throw FormatError("png inflate failed");

    // Undo per-scanline filtering.
    std::vector<uint8_t> px(size_t(h) * stride, 0);
    for (int y = 0; y < h; ++y) {
        const uint8_t filt = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = &raw[size_t(y) * (stride + 1) + 1];
        uint8_t* dst = &px[size_t(y) * stride];
        const uint8_t* up = y > 0 ? &px[size_t(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= size_t(ch) ? dst[x - ch] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= size_t(ch)) ? up[x - ch] : 0;
            int rec;
            switch (filt) {
                case 0: rec = src[x]; break;
                case 1: rec = src[x] + a; break;
                case 2: rec = src[x] + b; break;
                case 3: rec = src[x] + (a + b) / 2; break;
                case 4: rec = src[x] + paeth(a, b, c); break;
                default: throw FormatError("bad png filter type");
            }
            dst[x] = uint8_t(rec & 0xff);
        }
    }

    Image img(h, w, ch);
    for (size_t i = 0; i < px.size(); ++i) img.data[i] = px[i] / 255.0;
    return img;
}

std::vector<uint8_t> encode_png(const Image& img) {
    if (img.c != 1 && img.c != 3) throw FormatError("png encode expects 1 or 3 channels");
    const size_t stride = size_t(img.w) * img.c;

    std::vector<uint8_t> raw(size_t(img.h) * (stride + 1));
    for (int y = 0; y < img.h; ++y) {
        raw[size_t(y) * (stride + 1)] = 0;  // filter: none
        for (size_t x = 0; x < stride; ++x) {
            double v = img.data[size_t(y) * stride + x];
            int q = int(std::lround(v * 255.0));
            raw[size_t(y) * (stride + 1) + 1 + x] = uint8_t(std::min(255, std::max(0, q)));
        }
    }

    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw IoError("png deflate failed");
    comp.resize(bound);

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, uint32_t(img.w));
    put_be32(ihdr, uint32_t(img.h));
    ihdr.push_back(8);                            // bit depth
    ihdr.push_back(img.c == 3 ? 2 : 0);           // color type
    ihdr.push_back(0);                            // compression
    ihdr.push_back(0);                            // filter
    ihdr.push_back(0);                            // interlace

    std::vector<uint8_t> out(kPngSig, kPngSig + 8);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});
    return out;
}

Image load_image(const std::string& path, int target_size) {
    std::vector<uint8_t> bytes = read_file(path);
    Image img;
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
        img = decode_png(bytes);
    } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        img = decode_ppm(bytes);
    } else {
        throw FormatError("unrecognized image format: " + path);
    }
    if (target_size > 0 && (img.h != target_size || img.w != target_size))
        img = resize_bilinear(img, target_size, target_size);
    return img;
}

void save_image(const Image& img, const std::string& path) {
    write_file(path, encode_png(img));
}

void colormap_fire(int k, uint8_t rgb[3]) {
    double t = k / 255.0;
    auto q = [](double x) {
        x = std::min(1.0, std::max(0.0, x));
        return uint8_t(std::lround(x * 255.0));
    };
    rgb[0] = q(3.0 * t);
    rgb[1] = q(3.0 * t - 1.0);
    rgb[2] = q(3.0 * t - 2.0);
}

Image colorize_heatmap(const std::vector<double>& raster, int h, int w) {
    if (raster.size() != size_t(h) * w) throw ShapeError("heatmap raster size mismatch");
    double lo = raster.empty() ? 0.0 : raster[0], hi = lo;
    for (double v : raster) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    Image img(h, w, 3);
    for (size_t i = 0; i < raster.size(); ++i) {
        int k = span > 0 ? int(std::lround((raster[i] - lo) / span * 255.0)) : 0;
        uint8_t rgb[3];
        colormap_fire(std::min(255, std::max(0, k)), rgb);
        img.data[i * 3 + 0] = rgb[0] / 255.0;
        img.data[i * 3 + 1] = rgb[1] / 255.0;
        img.data[i * 3 + 2] = rgb[2] / 255.0;
    }
    return img;
}

void save_heatmap(const std::vector<double>& raster, int h, int w, const std::string& path) {
    save_image(colorize_heatmap(raster, h, w), path);
}

Mask load_mask(const std::string& path, int target_size) {
    Image img = load_image(path, 0);
    Mask m(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double v = 0;
            for (int ch = 0; ch < img.c; ++ch) v = std::max(v, img.at(y, x, ch));
            m.at(y, x) = v > 0.0 ? 1 : 0;
        }
    if (target_size > 0 && (m.h != target_size || m.w != target_size))
        m = downsample_mask(m, target_size, target_size);
    return m;
}

void save_mask(const Mask& m, const std::string& path) {
    Image img(m.h, m.w, 1);
    for (size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i] ? 1.0 : 0.0;
    save_image(img, path);
}

}  // namespace daf
