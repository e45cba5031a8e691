#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "attrgan/tensor.hpp"

namespace attrgan {

// Dataset-wide attribute vocabulary: ordered, unique, non-empty descriptions.
struct AttributeBank {
    std::vector<std::string> descriptions;
    std::unordered_map<std::string, int> index;

    int n() const { return static_cast<int>(descriptions.size()); }
};

struct MultiAttributeLabel {
    std::vector<std::uint8_t> bits;

    int n() const { return static_cast<int>(bits.size()); }
    int popcount() const {
        int c = 0;
        for (auto b : bits) c += b ? 1 : 0;
        return c;
    }
};

// Deduplicates preserving first occurrence; empty input is an error.
AttributeBank build_bank(const std::vector<std::string>& descriptions);

void save_bank(const AttributeBank& bank, const std::string& path);
AttributeBank load_bank(const std::string& path);

// Label with exactly k ones at the k largest cosine similarities between the
// sentence embedding and the memory rows; ties broken toward lower index.
MultiAttributeLabel retrieve_topk(const Tensor& sentence_embedding, const Tensor& memory_rows, int k);

}  // namespace attrgan
