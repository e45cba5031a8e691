#include "attrgan/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace attrgan {

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::uint8_t* data, size_t len) {
    put_u32_be(out, static_cast<std::uint32_t>(len));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    const auto crc =
        crc32(0L, out.data() + start, static_cast<uInt>(4 + len));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("write_png: empty image");
    const size_t stride = static_cast<size_t>(img.w) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        raw[static_cast<size_t>(y) * (stride + 1)] = 0;  // filter type 0
        std::memcpy(raw.data() + static_cast<size_t>(y) * (stride + 1) + 1, img.rgb.data() + static_cast<size_t>(y) * stride,
                    stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out;
    static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.insert(out.end(), magic, magic + 8);

    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(img.w >> 24);
    ihdr[1] = static_cast<std::uint8_t>(img.w >> 16);
    ihdr[2] = static_cast<std::uint8_t>(img.w >> 8);
    ihdr[3] = static_cast<std::uint8_t>(img.w);
    ihdr[4] = static_cast<std::uint8_t>(img.h >> 24);
    ihdr[5] = static_cast<std::uint8_t>(img.h >> 16);
    ihdr[6] = static_cast<std::uint8_t>(img.h >> 8);
    ihdr[7] = static_cast<std::uint8_t>(img.h);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    ihdr[10] = 0;  // deflate
    ihdr[11] = 0;  // adaptive filtering
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
    append_chunk(out, "IDAT", compressed.data(), compressed.size());
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_png: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 8) != 0)
        throw std::runtime_error("read_png: not a PNG file: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("read_png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = static_cast<int>(get_u32_be(data));
            h = static_cast<int>(get_u32_be(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw std::runtime_error("read_png: interlaced PNG unsupported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("read_png: missing IHDR in " + path);
    if (bit_depth != 8) throw std::runtime_error("read_png: only 8-bit PNGs supported: " + path);
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default: throw std::runtime_error("read_png: unsupported color type in " + path);
    }

    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<size_t>(h));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("read_png: inflate failed for " + path);

    // undo per-scanline filters
    std::vector<std::uint8_t> pix(stride * static_cast<size_t>(h));
    const int bpp = channels;
    for (int y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        std::uint8_t* dst = pix.data() + static_cast<size_t>(y) * stride;
        const std::uint8_t* up = y > 0 ? pix.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("read_png: bad filter type in " + path);
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }

    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* s = pix.data() + static_cast<size_t>(y) * stride + static_cast<size_t>(x) * channels;
            std::uint8_t* d = img.px(y, x);
            if (channels == 1) {
                d[0] = d[1] = d[2] = s[0];
            } else {
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
            }
        }
    return img;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({3, img.h, img.w});
    const size_t plane = static_cast<size_t>(img.h) * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const std::uint8_t* p = img.px(y, x);
            const size_t off = static_cast<size_t>(y) * img.w + x;
            t.data[off] = p[0] / 255.0;
            t.data[plane + off] = p[1] / 255.0;
            t.data[2 * plane + off] = p[2] / 255.0;
        }
    return t;
}

Image tensor_to_image(const Tensor& t, double lo, double hi) {
    if (t.rank() != 3 || t.dim(0) != 3) throw std::invalid_argument("tensor_to_image: expected [3,H,W]");
    const int h = t.dim(1), w = t.dim(2);
    Image img(h, w);
    const size_t plane = static_cast<size_t>(h) * w;
    const double scale = 255.0 / (hi - lo);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t off = static_cast<size_t>(y) * w + x;
            std::uint8_t* p = img.px(y, x);
            for (int c = 0; c < 3; ++c) {
                const double v = (t.data[static_cast<size_t>(c) * plane + off] - lo) * scale;
                p[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
            }
        }
    return img;
}

Image make_grid(const std::vector<Image>& tiles, int cols, int pad) {
    if (tiles.empty()) throw std::invalid_argument("make_grid: no tiles");
    const int th = tiles[0].h, tw = tiles[0].w;
    const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
    Image grid(rows * (th + pad) + pad, cols * (tw + pad) + pad);
    fill(grid, 16, 16, 16);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
        const int oy = pad + r * (th + pad), ox = pad + c * (tw + pad);
        for (int y = 0; y < th; ++y)
            std::memcpy(grid.px(oy + y, ox), tiles[i].px(y, 0), static_cast<size_t>(tw) * 3);
    }
    return grid;
}

void fill(Image& img, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (size_t i = 0; i < img.rgb.size(); i += 3) {
        img.rgb[i] = r;
        img.rgb[i + 1] = g;
        img.rgb[i + 2] = b;
    }
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    // Bresenham
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    int x = x0, y = y0;
    while (true) {
        if (x >= 0 && x < img.w && y >= 0 && y < img.h) {
            auto* p = img.px(y, x);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
        if (x == x1 && y == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
    }
}

void draw_rect(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    draw_line(img, x0, y0, x1, y0, r, g, b);
    draw_line(img, x1, y0, x1, y1, r, g, b);
    draw_line(img, x1, y1, x0, y1, r, g, b);
    draw_line(img, x0, y1, x0, y0, r, g, b);
}

}  // namespace attrgan
