#include <doctest.h>

#include <filesystem>

#include "attrgan/attribute_memory.hpp"
#include "attrgan/correlation.hpp"
#include "attrgan/nn.hpp"
#include "attrgan/rng.hpp"

using namespace attrgan;
namespace ag = attrgan::ag;

namespace {

TextEncoderSpec spec64() {
    TextEncoderSpec s;
    s.d = 64;
    return s;
}

AttributeBank toy_bank() { return build_bank({"red", "green", "blue", "circle", "square", "triangle"}); }

MultiAttributeLabel make_label(int n, std::initializer_list<int> active) {
    MultiAttributeLabel y;
    y.bits.assign(static_cast<size_t>(n), 0);
    for (int i : active) y.bits[static_cast<size_t>(i)] = 1;
    return y;
}

}  // namespace

TEST_CASE("attribute-embedding init copies the encoder output") {
    const auto bank = toy_bank();
    const auto spec = spec64();
    const auto mem = init_memory(bank, spec, MemoryInit::attribute_embeddings, MemoryUpdate::learnable, 1);
    const Tensor expect = encode_attributes(bank, spec);
    CHECK(mem.rows->value.data == expect.data);
    CHECK(mem.rows->requires_grad);
}

TEST_CASE("random init is deterministic per seed") {
    const auto bank = toy_bank();
    const auto a = init_memory(bank, spec64(), MemoryInit::random_noise, MemoryUpdate::learnable, 42);
    const auto b = init_memory(bank, spec64(), MemoryInit::random_noise, MemoryUpdate::learnable, 42);
    const auto c = init_memory(bank, spec64(), MemoryInit::random_noise, MemoryUpdate::learnable, 43);
    CHECK(a.rows->value.data == b.rows->value.data);
    CHECK(a.rows->value.data != c.rows->value.data);
}

TEST_CASE("frozen memory is bit-identical after an optimizer step") {
    const auto bank = toy_bank();
    auto mem = init_memory(bank, spec64(), MemoryInit::attribute_embeddings, MemoryUpdate::frozen, 1);
    CHECK_FALSE(mem.rows->requires_grad);
    const std::vector<double> before = mem.rows->value.data;

    // a loss that touches attribute 0; frozen rows stay out of the graph
    const Tensor y = labels_to_matrix({make_label(6, {0})});
    ag::Var e = sample_aware_embedding(y, mem, Pooling::mean);
    ag::Var loss = ag::sum(ag::mul(e, e));
    CHECK_FALSE(loss->requires_grad);
    CHECK(mem.rows->value.data == before);
}

TEST_CASE("sample-aware pooling follows the row arithmetic") {
    const auto bank = toy_bank();
    auto mem = init_memory(bank, spec64(), MemoryInit::attribute_embeddings, MemoryUpdate::learnable, 1);
    const auto& m = mem.rows->value;

    SUBCASE("one-hot picks the row in both modes") {
        const Tensor y = labels_to_matrix({make_label(6, {2})});
        const auto mean_emb = sample_aware_embedding(y, mem, Pooling::mean)->value;
        const auto sum_emb = sample_aware_embedding(y, mem, Pooling::sum)->value;
        for (int j = 0; j < 64; ++j) {
            CHECK(mean_emb.data[static_cast<size_t>(j)] == doctest::Approx(m.data[2 * 64 + static_cast<size_t>(j)]));
            CHECK(sum_emb.data[static_cast<size_t>(j)] == doctest::Approx(m.data[2 * 64 + static_cast<size_t>(j)]));
        }
    }

    SUBCASE("two active rows average in mean mode and add in sum mode") {
        const Tensor y = labels_to_matrix({make_label(6, {0, 2})});
        const auto mean_emb = sample_aware_embedding(y, mem, Pooling::mean)->value;
        const auto sum_emb = sample_aware_embedding(y, mem, Pooling::sum)->value;
        for (int j = 0; j < 64; ++j) {
            const double r0 = m.data[static_cast<size_t>(j)];
            const double r2 = m.data[2 * 64 + static_cast<size_t>(j)];
            CHECK(mean_emb.data[static_cast<size_t>(j)] == doctest::Approx(0.5 * (r0 + r2)).epsilon(1e-12));
            CHECK(sum_emb.data[static_cast<size_t>(j)] == doctest::Approx(r0 + r2).epsilon(1e-12));
        }
    }

    SUBCASE("all-zero label raises EmptyAttributeSetError") {
        const Tensor y = labels_to_matrix({make_label(6, {})});
        CHECK_THROWS_AS(sample_aware_embedding(y, mem, Pooling::mean), EmptyAttributeSetError);
    }
}

TEST_CASE("gcn_forward follows the layer recurrence") {
    const auto bank = toy_bank();

    SUBCASE("identity correlation and weights reproduce nonnegative memory") {
        AttributeMemory mem;
        mem.n = 3;
        mem.d = 2;
        Tensor rows({3, 2}, {0.5, 1.0, 2.0, 0.25, 0.0, 3.0});
        mem.rows = ag::make_var(rows, true);
        GcnStack stack;
        stack.c_reweighted = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        Tensor w({2, 2}, {1, 0, 0, 1});
        stack.weights.push_back(ag::make_var(w, true));
        const auto h = gcn_forward(mem, stack)->value;
        CHECK(h.data == rows.data);
    }

    SUBCASE("zero memory is a fixed point") {
        AttributeMemory mem;
        mem.n = 4;
        mem.d = 8;
        mem.rows = ag::make_var(Tensor({4, 8}), true);
        const auto corr = Tensor({4, 4}, std::vector<double>(16, 0.25));
        GcnStack stack = init_gcn(2, 8, corr, 9);
        const auto h = gcn_forward(mem, stack)->value;
        for (double v : h.data) CHECK(v == 0.0);
    }

    SUBCASE("2-node hand computation") {
        AttributeMemory mem;
        mem.n = 2;
        mem.d = 2;
        mem.rows = ag::make_var(Tensor({2, 2}, {1.0, 2.0, -1.0, 0.5}), true);
        GcnStack stack;
        stack.leaky_slope = 0.2;
        stack.c_reweighted = Tensor({2, 2}, {0.75, 0.25, 0.25, 0.75});
        stack.weights.push_back(ag::make_var(Tensor({2, 2}, {1.0, -1.0, 0.5, 2.0}), true));
        // C'M = [[0.5, 1.625], [-0.5, 0.875]]
        // (C'M)W = [[0.5*1+1.625*0.5, 0.5*-1+1.625*2], [-0.5+0.4375, 0.5+1.75]]
        //        = [[1.3125, 2.75], [-0.0625, 2.25]]
        // leaky(0.2): [[1.3125, 2.75], [-0.0125, 2.25]]
        const auto h = gcn_forward(mem, stack)->value;
        CHECK(h.data[0] == doctest::Approx(1.3125).epsilon(1e-12));
        CHECK(h.data[1] == doctest::Approx(2.75).epsilon(1e-12));
        CHECK(h.data[2] == doctest::Approx(-0.0125).epsilon(1e-12));
        CHECK(h.data[3] == doctest::Approx(2.25).epsilon(1e-12));
    }

    SUBCASE("nonnegative inputs and weights stay nonnegative") {
        Rng rng(31);
        AttributeMemory mem;
        mem.n = 5;
        mem.d = 6;
        Tensor rows({5, 6});
        for (auto& v : rows.data) v = std::abs(rng.normal());
        mem.rows = ag::make_var(rows, true);
        Tensor corr({5, 5});
        for (auto& v : corr.data) v = rng.uniform() * 0.3;
        GcnStack stack;
        stack.c_reweighted = corr;
        for (int l = 0; l < 2; ++l) {
            Tensor w({6, 6});
            for (auto& v : w.data) v = std::abs(rng.normal());
            stack.weights.push_back(ag::make_var(w, true));
        }
        const auto h = gcn_forward(mem, stack)->value;
        for (double v : h.data) CHECK(v >= 0.0);
    }
}

TEST_CASE("sample_joint_embedding reduces to sample-aware under identity propagation") {
    AttributeMemory mem;
    mem.n = 3;
    mem.d = 4;
    Tensor rows({3, 4});
    Rng rng(33);
    for (auto& v : rows.data) v = std::abs(rng.normal());
    mem.rows = ag::make_var(rows, true);
    GcnStack stack;
    stack.c_reweighted = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor w({4, 4});
    for (int i = 0; i < 4; ++i) w.data[static_cast<size_t>(i) * 4 + i] = 1.0;
    stack.weights.push_back(ag::make_var(w, true));

    const Tensor y = labels_to_matrix({make_label(3, {0, 2})});
    const auto joint = sample_joint_embedding(y, mem, stack, Pooling::mean)->value;
    const auto aware = sample_aware_embedding(y, mem, Pooling::mean)->value;
    for (size_t i = 0; i < joint.data.size(); ++i) CHECK(joint.data[i] == doctest::Approx(aware.data[i]));

    const Tensor y1 = labels_to_matrix({make_label(3, {1})});
    const auto one = sample_joint_embedding(y1, mem, stack, Pooling::mean)->value;
    for (int j = 0; j < 4; ++j)
        CHECK(one.data[static_cast<size_t>(j)] == doctest::Approx(rows.data[4 + static_cast<size_t>(j)]));

    CHECK_THROWS_AS(sample_joint_embedding(labels_to_matrix({make_label(3, {})}), mem, stack, Pooling::mean),
                    EmptyAttributeSetError);
}

TEST_CASE("3-node sample_joint matches an independent chain evaluation") {
    // correlation from the worked example of the correlation module
    std::vector<MultiAttributeLabel> labels = {make_label(3, {0, 1}), make_label(3, {0}), make_label(3, {1, 2})};
    const auto corr = build_correlation(labels, 0.4, 0.25);

    AttributeMemory mem;
    mem.n = 3;
    mem.d = 2;
    mem.rows = ag::make_var(Tensor({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0}), true);
    GcnStack stack;
    stack.leaky_slope = 0.2;
    stack.c_reweighted = corr.C_reweighted;
    stack.weights.push_back(ag::make_var(Tensor({2, 2}, {2.0, 0.0, 0.0, 2.0}), true));

    // oracle: explicit matrix chain in plain arithmetic
    std::vector<double> cm(6, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 3; ++k)
                cm[static_cast<size_t>(i) * 2 + j] += corr.C_reweighted.data[static_cast<size_t>(i) * 3 + k] *
                                                      mem.rows->value.data[static_cast<size_t>(k) * 2 + j];
    for (auto& v : cm) {
        v *= 2.0;
        if (v < 0) v *= 0.2;
    }
    const Tensor y = labels_to_matrix({make_label(3, {0, 2})});
    const auto got = sample_joint_embedding(y, mem, stack, Pooling::mean)->value;
    for (int j = 0; j < 2; ++j)
        CHECK(got.data[static_cast<size_t>(j)] ==
              doctest::Approx(0.5 * (cm[static_cast<size_t>(j)] + cm[4 + static_cast<size_t>(j)])).epsilon(1e-12));
}

TEST_CASE("gradient sparsity: sample-aware gradients vanish off the label support") {
    Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(14));  // up to 16
        const int d = 8;
        AttributeMemory mem;
        mem.n = n;
        mem.d = d;
        Tensor rows({n, d});
        rng.normal_fill(rows.data);
        mem.rows = ag::make_var(rows, true);

        MultiAttributeLabel y;
        y.bits.assign(static_cast<size_t>(n), 0);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        for (int j = 0; j < k; ++j) y.bits[rng.below(static_cast<std::uint64_t>(n))] = 1;

        ag::Var e = sample_aware_embedding(y, mem, Pooling::mean);
        ag::Var target = ag::constant(Tensor::full({1, d}, 0.3));
        ag::Var loss = ag::sum(ag::pow_scalar(ag::sub(e, target), 2.0));
        const auto grads = ag::grad(loss, {mem.rows});
        const auto& g = grads[0]->value;
        for (int i = 0; i < n; ++i) {
            double row_abs = 0.0;
            for (int j = 0; j < d; ++j) row_abs += std::abs(g.data[static_cast<size_t>(i) * d + j]);
            if (y.bits[static_cast<size_t>(i)]) CHECK(row_abs > 0.0);
            else CHECK(row_abs == 0.0);  // exact zero
        }
    }
}

TEST_CASE("gradient locality: sample-joint gradients stay within L hops") {
    // path graph 0-1-2-3-4 as C', so the L-hop neighbourhood is explicit
    const int n = 5, d = 4, L = 2;
    Tensor corr({n, n});
    auto set = [&](int i, int j, double v) { corr.data[static_cast<size_t>(i) * n + j] = v; };
    for (int i = 0; i < n; ++i) set(i, i, 0.75);
    for (int i = 0; i + 1 < n; ++i) {
        set(i, i + 1, 0.25);
        set(i + 1, i, 0.25);
    }

    AttributeMemory mem;
    mem.n = n;
    mem.d = d;
    Rng rng(41);
    Tensor rows({n, d});
    for (auto& v : rows.data) v = std::abs(rng.normal()) + 0.1;  // keep LeakyReLU in its linear region
    mem.rows = ag::make_var(rows, true);

    GcnStack stack;
    stack.c_reweighted = corr;
    stack.leaky_slope = 0.2;
    for (int l = 0; l < L; ++l) {
        Tensor w({d, d});
        for (auto& v : w.data) v = std::abs(rng.normal()) * 0.3 + 0.05;
        stack.weights.push_back(ag::make_var(w, true));
    }

    // label selects node 0 only; reachable within 2 hops: {0, 1, 2}
    MultiAttributeLabel y;
    y.bits.assign(n, 0);
    y.bits[0] = 1;
    ag::Var e = sample_joint_embedding(y, mem, stack, Pooling::mean);
    ag::Var loss = ag::sum(ag::pow_scalar(e, 2.0));
    const auto grads = ag::grad(loss, {mem.rows});
    const auto& g = grads[0]->value;

    auto row_abs = [&](int i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += std::abs(g.data[static_cast<size_t>(i) * d + j]);
        return s;
    };
    CHECK(row_abs(0) > 0.0);
    CHECK(row_abs(1) > 0.0);  // 1-hop neighbour co-updates
    CHECK(row_abs(2) > 0.0);
    CHECK(row_abs(3) == 0.0);  // 3 hops away: exactly zero
    CHECK(row_abs(4) == 0.0);
}

TEST_CASE("memory checkpoint round trip preserves metadata and rows to f32") {
    const auto bank = toy_bank();
    auto mem = init_memory(bank, spec64(), MemoryInit::attribute_embeddings, MemoryUpdate::frozen, 1);
    const auto dir = std::filesystem::temp_directory_path() / "attrgan_test_mem";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "memory.bin").string();
    save_memory_checkpoint(mem, 123, path);
    std::int64_t step = 0;
    const auto back = load_memory_checkpoint(path, &step);
    CHECK(step == 123);
    CHECK(back.update_mode == MemoryUpdate::frozen);
    CHECK(back.init_mode == MemoryInit::attribute_embeddings);
    REQUIRE(back.rows->value.shape == mem.rows->value.shape);
    for (size_t i = 0; i < back.rows->value.data.size(); ++i)
        CHECK(back.rows->value.data[i] ==
              doctest::Approx(mem.rows->value.data[i]).epsilon(1e-6));
}

TEST_CASE("init_gcn validates layer count and shape") {
    const Tensor corr({3, 3});
    CHECK_THROWS(init_gcn(0, 8, corr, 1));
    CHECK_THROWS(init_gcn(5, 8, corr, 1));
    CHECK_THROWS(init_gcn(2, 8, Tensor({3, 4}), 1));
}
