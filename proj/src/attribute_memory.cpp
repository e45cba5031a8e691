#include "attrgan/attribute_memory.hpp"

#include <cmath>

#include "attrgan/rng.hpp"
#include "attrgan/serialize.hpp"

namespace attrgan {

AttributeMemory init_memory(const AttributeBank& bank, const TextEncoderSpec& spec, MemoryInit init_mode,
                            MemoryUpdate update_mode, std::uint64_t seed) {
    AttributeMemory mem;
    mem.init_mode = init_mode;
    mem.update_mode = update_mode;
    mem.n = bank.n();
    mem.d = spec.d;
    Tensor rows({mem.n, mem.d});
    if (init_mode == MemoryInit::attribute_embeddings) {
        rows = encode_attributes(bank, spec);
    } else {
        Rng rng(seed ^ 0x6d656d6fULL);
        rng.normal_fill(rows.data);
    }
    mem.rows = ag::make_var(std::move(rows), update_mode == MemoryUpdate::learnable);
    return mem;
}

GcnStack init_gcn(int layers, int d, const Tensor& c_reweighted, std::uint64_t seed, double leaky_slope) {
    if (layers < 1 || layers > 4) throw std::invalid_argument("init_gcn: layers must be in [1, 4]");
    if (c_reweighted.rank() != 2 || c_reweighted.dim(0) != c_reweighted.dim(1))
        throw std::invalid_argument("init_gcn: correlation matrix must be square");
    GcnStack stack;
    stack.c_reweighted = c_reweighted;
    stack.leaky_slope = leaky_slope;
    Rng rng(seed ^ 0x67636e77ULL);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < layers; ++l) {
        Tensor w({d, d});
        for (auto& v : w.data) v = scale * rng.normal();
        stack.weights.push_back(ag::make_var(std::move(w), true));
    }
    return stack;
}

ag::Var gcn_forward(const AttributeMemory& memory, const GcnStack& stack) {
    if (stack.c_reweighted.dim(0) != memory.n)
        throw std::invalid_argument("gcn_forward: correlation size does not match memory rows");
    ag::Var h = memory.rows;
    const ag::Var corr = ag::constant(stack.c_reweighted);
    for (const auto& w : stack.weights) {
        if (w->value.dim(0) != memory.d || w->value.dim(1) != memory.d)
            throw std::invalid_argument("gcn_forward: transition matrix shape mismatch");
        h = ag::leaky_relu(ag::matmul(ag::matmul(corr, h), w), stack.leaky_slope);
    }
    return h;
}

ag::Var pool_rows(const Tensor& labels, const ag::Var& rows, Pooling pooling) {
    if (labels.rank() != 2) throw std::invalid_argument("pool_rows: labels must be [B,n]");
    if (labels.dim(1) != rows->value.dim(0)) throw std::invalid_argument("pool_rows: label width != memory rows");
    const int b = labels.dim(0), n = labels.dim(1);
    std::vector<double> inv_counts(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        double c = 0.0;
        for (int j = 0; j < n; ++j) c += labels.data[static_cast<size_t>(i) * n + j];
        if (c == 0.0) throw EmptyAttributeSetError();
        inv_counts[static_cast<size_t>(i)] = 1.0 / c;
    }
    ag::Var pooled = ag::matmul(ag::constant(labels), rows);
    if (pooling == Pooling::mean)
        pooled = ag::scale_rows(pooled, ag::constant(Tensor({b}, std::move(inv_counts))));
    return pooled;
}

ag::Var sample_aware_embedding(const Tensor& labels, const AttributeMemory& memory, Pooling pooling) {
    return pool_rows(labels, memory.rows, pooling);
}

ag::Var sample_joint_embedding(const Tensor& labels, const AttributeMemory& memory, const GcnStack& stack,
                               Pooling pooling) {
    return pool_rows(labels, gcn_forward(memory, stack), pooling);
}

namespace {
Tensor one_label_matrix(const MultiAttributeLabel& y) {
    Tensor t({1, y.n()});
    for (int i = 0; i < y.n(); ++i) t.data[static_cast<size_t>(i)] = y.bits[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return t;
}
}  // namespace

ag::Var sample_aware_embedding(const MultiAttributeLabel& y, const AttributeMemory& memory, Pooling pooling) {
    return sample_aware_embedding(one_label_matrix(y), memory, pooling);
}

ag::Var sample_joint_embedding(const MultiAttributeLabel& y, const AttributeMemory& memory, const GcnStack& stack,
                               Pooling pooling) {
    return sample_joint_embedding(one_label_matrix(y), memory, stack, pooling);
}

Tensor labels_to_matrix(const std::vector<MultiAttributeLabel>& labels) {
    if (labels.empty()) throw std::invalid_argument("labels_to_matrix: empty list");
    const int n = labels[0].n();
    Tensor t({static_cast<int>(labels.size()), n});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].n() != n) throw std::invalid_argument("labels_to_matrix: mixed label lengths");
        for (int j = 0; j < n; ++j)
            t.data[i * static_cast<size_t>(n) + static_cast<size_t>(j)] = labels[i].bits[static_cast<size_t>(j)];
    }
    return t;
}

namespace {
constexpr std::uint32_t kMemMagic = 0x414d454dULL;  // "MEMA"
}

void save_memory_checkpoint(const AttributeMemory& memory, std::int64_t step, const std::string& path) {
    ByteWriter w;
    w.put_u32(kMemMagic);
    w.put_u32(1);
    w.put_u32(memory.init_mode == MemoryInit::attribute_embeddings ? 0u : 1u);
    w.put_u32(memory.update_mode == MemoryUpdate::learnable ? 0u : 1u);
    w.put_i64(step);
    w.put_tensor_f32(memory.rows->value);
    atomic_write_file(path, w.bytes);
}

AttributeMemory load_memory_checkpoint(const std::string& path, std::int64_t* step_out) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (r.get_u32() != kMemMagic) throw std::runtime_error("load_memory_checkpoint: bad magic in " + path);
    if (r.get_u32() != 1) throw std::runtime_error("load_memory_checkpoint: unsupported version in " + path);
    AttributeMemory mem;
    mem.init_mode = r.get_u32() == 0 ? MemoryInit::attribute_embeddings : MemoryInit::random_noise;
    mem.update_mode = r.get_u32() == 0 ? MemoryUpdate::learnable : MemoryUpdate::frozen;
    const std::int64_t step = r.get_i64();
    if (step_out) *step_out = step;
    Tensor rows = r.get_tensor_f32();
    mem.n = rows.dim(0);
    mem.d = rows.dim(1);
    mem.rows = ag::make_var(std::move(rows), mem.update_mode == MemoryUpdate::learnable);
    return mem;
}

}  // namespace attrgan
