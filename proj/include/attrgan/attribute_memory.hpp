#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/autograd.hpp"
#include "attrgan/tensor.hpp"
#include "attrgan/text_encoder.hpp"

namespace attrgan {

enum class MemoryInit { attribute_embeddings, random_noise };
enum class MemoryUpdate { learnable, frozen };
enum class Pooling { sum, mean };

struct EmptyAttributeSetError : std::invalid_argument {
    EmptyAttributeSetError() : std::invalid_argument("attribute embedding requested for an all-zero label") {}
};

// Learnable n x d embedding table over the attribute bank. Read and write
// happen through the generator's forward and backward passes; frozen mode
// keeps the rows out of the optimizer entirely.
struct AttributeMemory {
    ag::Var rows;  // [n,d]
    MemoryInit init_mode = MemoryInit::attribute_embeddings;
    MemoryUpdate update_mode = MemoryUpdate::learnable;
    int n = 0;
    int d = 0;
};

AttributeMemory init_memory(const AttributeBank& bank, const TextEncoderSpec& spec, MemoryInit init_mode,
                            MemoryUpdate update_mode, std::uint64_t seed);

// Stacked graph convolutions over the re-weighted correlation matrix; the
// transition matrices train jointly with the generator.
struct GcnStack {
    std::vector<ag::Var> weights;  // L matrices, each [d,d]
    Tensor c_reweighted;           // [n,n]
    double leaky_slope = 0.2;
};

GcnStack init_gcn(int layers, int d, const Tensor& c_reweighted, std::uint64_t seed, double leaky_slope = 0.2);

// H^0 = M, H^{l+1} = LeakyReLU(C' H^l W^l); returns H^L
ag::Var gcn_forward(const AttributeMemory& memory, const GcnStack& stack);

// labels as a [B,n] 0/1 matrix; rows pooled per the label support
ag::Var pool_rows(const Tensor& labels, const ag::Var& rows, Pooling pooling);

ag::Var sample_aware_embedding(const Tensor& labels, const AttributeMemory& memory, Pooling pooling);
ag::Var sample_joint_embedding(const Tensor& labels, const AttributeMemory& memory, const GcnStack& stack,
                               Pooling pooling);

// single-label conveniences
ag::Var sample_aware_embedding(const MultiAttributeLabel& y, const AttributeMemory& memory, Pooling pooling);
ag::Var sample_joint_embedding(const MultiAttributeLabel& y, const AttributeMemory& memory, const GcnStack& stack,
                               Pooling pooling);

Tensor labels_to_matrix(const std::vector<MultiAttributeLabel>& labels);

// float32 export with init/update metadata and the training step count
void save_memory_checkpoint(const AttributeMemory& memory, std::int64_t step, const std::string& path);
AttributeMemory load_memory_checkpoint(const std::string& path, std::int64_t* step_out = nullptr);

}  // namespace attrgan
