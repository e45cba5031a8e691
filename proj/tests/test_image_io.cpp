#include <doctest.h>

#include <filesystem>

#include "attrgan/image_io.hpp"
#include "attrgan/rng.hpp"
#include "attrgan/serialize.hpp"

using namespace attrgan;
namespace fs = std::filesystem;

namespace {
fs::path tmp_dir() {
    const auto p = fs::temp_directory_path() / "attrgan_test_io";
    fs::create_directories(p);
    return p;
}
}  // namespace

TEST_CASE("png round trip is lossless") {
    Rng rng(3);
    Image img(13, 17);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.below(256));
    const auto path = (tmp_dir() / "roundtrip.png").string();
    write_png(path, img);
    const Image back = read_png(path);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("png writes are byte deterministic") {
    Image img(8, 8);
    fill(img, 10, 200, 30);
    img.px(3, 4)[0] = 255;
    const auto p1 = (tmp_dir() / "det1.png").string();
    const auto p2 = (tmp_dir() / "det2.png").string();
    write_png(p1, img);
    write_png(p2, img);
    CHECK(read_file_bytes(p1) == read_file_bytes(p2));
}

TEST_CASE("tensor/image conversion inverts within quantization") {
    Image img(4, 4);
    for (size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 5);
    const Tensor t = image_to_tensor(img);
    CHECK(t.shape == std::vector<int>{3, 4, 4});
    for (double v : t.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    const Image back = tensor_to_image(t, 0.0, 1.0);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("read_png rejects non-png input") {
    const auto path = (tmp_dir() / "bogus.png").string();
    atomic_write_file(path, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK_THROWS(read_png(path));
}
