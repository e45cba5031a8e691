#include "attrgan/serialize.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "attrgan/rng.hpp"

static_assert(std::endian::native == std::endian::little, "little-endian target assumed");

namespace attrgan {

void ByteWriter::put_raw(const void* p, size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
}

void ByteWriter::put_u32(std::uint32_t v) { put_raw(&v, sizeof(v)); }
void ByteWriter::put_u64(std::uint64_t v) { put_raw(&v, sizeof(v)); }
void ByteWriter::put_i64(std::int64_t v) { put_raw(&v, sizeof(v)); }
void ByteWriter::put_f32(float v) { put_raw(&v, sizeof(v)); }
void ByteWriter::put_f64(double v) { put_raw(&v, sizeof(v)); }

void ByteWriter::put_string(const std::string& s) {
    put_u64(s.size());
    put_raw(s.data(), s.size());
}

void ByteWriter::put_tensor_f64(const Tensor& t) {
    put_u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(static_cast<std::uint32_t>(d));
    put_raw(t.data.data(), t.data.size() * sizeof(double));
}

void ByteWriter::put_tensor_f32(const Tensor& t) {
    put_u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f32(static_cast<float>(v));
}

void ByteReader::get_raw(void* out, size_t n) {
    if (n > remaining) throw std::runtime_error("ByteReader: truncated input");
    std::memcpy(out, p, n);
    p += n;
    remaining -= n;
}

std::uint32_t ByteReader::get_u32() {
    std::uint32_t v;
    get_raw(&v, sizeof(v));
    return v;
}
std::uint64_t ByteReader::get_u64() {
    std::uint64_t v;
    get_raw(&v, sizeof(v));
    return v;
}
std::int64_t ByteReader::get_i64() {
    std::int64_t v;
    get_raw(&v, sizeof(v));
    return v;
}
float ByteReader::get_f32() {
    float v;
    get_raw(&v, sizeof(v));
    return v;
}
double ByteReader::get_f64() {
    double v;
    get_raw(&v, sizeof(v));
    return v;
}

std::string ByteReader::get_string() {
    const auto len = get_u64();
    if (len > remaining) throw std::runtime_error("ByteReader: truncated string");
    std::string s(reinterpret_cast<const char*>(p), len);
    p += len;
    remaining -= len;
    return s;
}

Tensor ByteReader::get_tensor_f64() {
    const auto rank = get_u32();
    if (rank > 8) throw std::runtime_error("ByteReader: implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32());
    Tensor t(shape);
    get_raw(t.data.data(), t.data.size() * sizeof(double));
    return t;
}

Tensor ByteReader::get_tensor_f32() {
    const auto rank = get_u32();
    if (rank > 8) throw std::runtime_error("ByteReader: implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32());
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<double>(get_f32());
    return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_file_bytes: cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void atomic_write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("atomic_write_file: cannot open " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("atomic_write_file: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::uint64_t hash_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace attrgan
