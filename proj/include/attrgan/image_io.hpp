#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/tensor.hpp"

namespace attrgan {

// 8-bit RGB raster, row-major.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb;  // h*w*3

    Image() = default;
    Image(int height, int width) : h(height), w(width), rgb(static_cast<size_t>(height) * width * 3, 0) {}

    std::uint8_t* px(int y, int x) { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const std::uint8_t* px(int y, int x) const { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
};

// Minimal PNG support over zlib: 8-bit RGB/RGBA/grayscale, no interlacing.
// Writes are byte-deterministic (fixed filter, fixed compression level).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// [3,H,W] in [0,1]
Tensor image_to_tensor(const Image& img);
// clamps to the valid range; expects [3,H,W] in [lo,hi]
Image tensor_to_image(const Tensor& t, double lo = 0.0, double hi = 1.0);

Image make_grid(const std::vector<Image>& tiles, int cols, int pad = 2);

// drawing helpers for sample sheets and loss curves
void fill(Image& img, std::uint8_t r, std::uint8_t g, std::uint8_t b);
void draw_line(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
void draw_rect(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);

}  // namespace attrgan
