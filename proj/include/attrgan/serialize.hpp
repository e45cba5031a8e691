#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/tensor.hpp"

namespace attrgan {

// Little-endian binary buffer helpers (x86 target; asserted at build time).
struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_i64(std::int64_t v);
    void put_f32(float v);
    void put_f64(double v);
    void put_string(const std::string& s);        // u64 length prefix
    void put_tensor_f64(const Tensor& t);         // rank, dims, raw doubles
    void put_tensor_f32(const Tensor& t);         // rank, dims, floats (lossy)
    void put_raw(const void* p, size_t n);
};

struct ByteReader {
    const std::uint8_t* p = nullptr;
    size_t remaining = 0;

    explicit ByteReader(const std::vector<std::uint8_t>& b) : p(b.data()), remaining(b.size()) {}

    std::uint32_t get_u32();
    std::uint64_t get_u64();
    std::int64_t get_i64();
    float get_f32();
    double get_f64();
    std::string get_string();
    Tensor get_tensor_f64();
    Tensor get_tensor_f32();
    void get_raw(void* out, size_t n);
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
// write-temp-then-rename so partially written artifacts are never observed
void atomic_write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

std::uint64_t hash_file(const std::string& path);

}  // namespace attrgan
