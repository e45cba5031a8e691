#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/tensor.hpp"

namespace attrgan {

struct AttributeBank;

enum class EncoderKind { reference_bow, external };

// Stand-in for a pretrained sentence encoder: a deterministic hashed
// bag-of-words embedding. `external` reads precomputed embeddings from a
// line-delimited "<text>\t<d floats>" file instead.
struct TextEncoderSpec {
    int d = 64;
    EncoderKind kind = EncoderKind::reference_bow;
    std::uint64_t vocab_seed = 0;
    std::string external_path;

    void validate() const;
};

std::vector<std::string> tokenize(const std::string& text);

// fixed pseudo-random unit-gaussian vector for one token
Tensor token_vector(const std::string& token, const TextEncoderSpec& spec);

// mean of per-token vectors; empty text is an error
Tensor encode_sentence(const std::string& text, const TextEncoderSpec& spec);

// row i = encode_sentence(descriptions[i]); the initial attribute memory
Tensor encode_attributes(const AttributeBank& bank, const TextEncoderSpec& spec);

}  // namespace attrgan
