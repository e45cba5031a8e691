#include <doctest.h>

#include <filesystem>

#include "attrgan/correlation.hpp"
#include "attrgan/rng.hpp"

using namespace attrgan;

namespace {

MultiAttributeLabel make_label(int n, std::initializer_list<int> active) {
    MultiAttributeLabel y;
    y.bits.assign(static_cast<size_t>(n), 0);
    for (int i : active) y.bits[static_cast<size_t>(i)] = 1;
    return y;
}

// the worked 3-sample example: {a0,a1}, {a0}, {a1,a2}
std::vector<MultiAttributeLabel> worked_example() {
    return {make_label(3, {0, 1}), make_label(3, {0}), make_label(3, {1, 2})};
}

}  // namespace

TEST_CASE("count_cooccurrence matches the hand count") {
    const auto stats = count_cooccurrence(worked_example());
    CHECK(stats.attr_counts == std::vector<std::int64_t>{2, 2, 1});
    CHECK(stats.pair_counts[0 * 3 + 1] == 1);
    CHECK(stats.pair_counts[1 * 3 + 2] == 1);
    CHECK(stats.pair_counts[0 * 3 + 2] == 0);
    // symmetry and diagonal invariants
    for (int i = 0; i < 3; ++i) {
        CHECK(stats.pair_counts[static_cast<size_t>(i) * 3 + i] == stats.attr_counts[static_cast<size_t>(i)]);
        for (int j = 0; j < 3; ++j) {
            CHECK(stats.pair_counts[static_cast<size_t>(i) * 3 + j] ==
                  stats.pair_counts[static_cast<size_t>(j) * 3 + i]);
            CHECK(stats.pair_counts[static_cast<size_t>(i) * 3 + j] <=
                  std::min(stats.attr_counts[static_cast<size_t>(i)], stats.attr_counts[static_cast<size_t>(j)]));
        }
    }
}

TEST_CASE("a single saturated sample fills pair_counts with ones") {
    const auto stats = count_cooccurrence({make_label(4, {0, 1, 2, 3})});
    for (auto v : stats.pair_counts) CHECK(v == 1);
}

TEST_CASE("disjoint singletons leave only the diagonal") {
    const auto stats = count_cooccurrence({make_label(3, {0}), make_label(3, {1}), make_label(3, {2})});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(stats.pair_counts[static_cast<size_t>(i) * 3 + j] == (i == j ? 1 : 0));
}

TEST_CASE("mixed label lengths are rejected") {
    CHECK_THROWS(count_cooccurrence({make_label(3, {0}), make_label(4, {0})}));
    CHECK_THROWS(count_cooccurrence({}));
}

TEST_CASE("binary_matrix thresholds the worked example as computed by hand") {
    const auto stats = count_cooccurrence(worked_example());
    const Tensor c = binary_matrix(stats, 0.4);
    // P[0][1] = 1/2, P[1][0] = 1/2, P[1][2] = 1/2, P[2][1] = 1/1
    CHECK(c.data[0 * 3 + 1] == 1.0);
    CHECK(c.data[1 * 3 + 0] == 1.0);
    CHECK(c.data[1 * 3 + 2] == 1.0);
    CHECK(c.data[2 * 3 + 1] == 1.0);
    CHECK(c.data[0 * 3 + 2] == 0.0);
    CHECK(c.data[2 * 3 + 0] == 0.0);
    // diagonal: P_ii = 1 >= tau
    for (int i = 0; i < 3; ++i) CHECK(c.data[static_cast<size_t>(i) * 3 + i] == 1.0);
}

TEST_CASE("tau = 1 keeps only the certain edges") {
    const auto stats = count_cooccurrence(worked_example());
    const Tensor c = binary_matrix(stats, 1.0);
    // only P[2][1] = 1.0 survives off-diagonal
    int off_diag_ones = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i != j && c.data[static_cast<size_t>(i) * 3 + j] != 0.0) ++off_diag_ones;
    CHECK(off_diag_ones == 1);
    CHECK(c.data[2 * 3 + 1] == 1.0);
    for (int i = 0; i < 3; ++i) CHECK(c.data[static_cast<size_t>(i) * 3 + i] == 1.0);
}

TEST_CASE("a never-observed attribute has an all-zero row") {
    const auto stats = count_cooccurrence({make_label(3, {0}), make_label(3, {0, 1})});
    const Tensor p = probability_matrix(stats);
    const Tensor c = binary_matrix(stats, 0.4);
    for (int j = 0; j < 3; ++j) {
        CHECK(p.data[2 * 3 + static_cast<size_t>(j)] == 0.0);
        CHECK(c.data[2 * 3 + static_cast<size_t>(j)] == 0.0);
    }
}

TEST_CASE("reweight_matrix applies the re-weighting by hand") {
    const auto stats = count_cooccurrence(worked_example());
    const Tensor c = binary_matrix(stats, 0.4);
    const Tensor cw = reweight_matrix(c, 0.25);
    CHECK(cw.data[1 * 3 + 0] == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(cw.data[1 * 3 + 2] == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(cw.data[1 * 3 + 1] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(cw.data[0 * 3 + 1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(cw.data[0 * 3 + 0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(cw.data[0 * 3 + 2] == 0.0);
}

TEST_CASE("isolated rows keep the 1-p diagonal and zero neighbours") {
    Tensor c({3, 3});
    c.data = {1, 0, 0, 0, 1, 1, 0, 1, 1};
    const Tensor cw = reweight_matrix(c, 0.25);
    CHECK(cw.data[0] == doctest::Approx(0.75));
    CHECK(cw.data[1] == 0.0);
    CHECK(cw.data[2] == 0.0);
    for (int i = 0; i < 3; ++i) CHECK(cw.data[static_cast<size_t>(i) * 3 + i] == doctest::Approx(0.75));
}

TEST_CASE("row sums of the re-weighted matrix are 1 or 1-p") {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(7));
        std::vector<MultiAttributeLabel> labels;
        const int count = 3 + static_cast<int>(rng.below(40));
        for (int s = 0; s < count; ++s) {
            MultiAttributeLabel y;
            y.bits.assign(static_cast<size_t>(n), 0);
            const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            for (int j = 0; j < k; ++j) y.bits[rng.below(static_cast<std::uint64_t>(n))] = 1;
            labels.push_back(y);
        }
        const auto corr = build_correlation(labels, 0.4, 0.25);
        for (int i = 0; i < n; ++i) {
            double row_sum = 0.0;
            int neighbours = 0;
            for (int j = 0; j < n; ++j) {
                row_sum += corr.C_reweighted.data[static_cast<size_t>(i) * n + j];
                if (i != j && corr.C.data[static_cast<size_t>(i) * n + j] != 0.0) ++neighbours;
            }
            if (neighbours > 0) CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
            else CHECK(row_sum == doctest::Approx(0.75).epsilon(1e-12));
        }
    }
}

TEST_CASE("lowering tau never removes an edge") {
    Rng rng(21);
    std::vector<MultiAttributeLabel> labels;
    for (int s = 0; s < 25; ++s) {
        MultiAttributeLabel y;
        y.bits.assign(5, 0);
        for (int j = 0; j < 5; ++j) y.bits[static_cast<size_t>(j)] = rng.uniform() < 0.4 ? 1 : 0;
        if (y.popcount() == 0) y.bits[0] = 1;
        labels.push_back(y);
    }
    const auto stats = count_cooccurrence(labels);
    const Tensor hi = binary_matrix(stats, 0.7);
    const Tensor lo = binary_matrix(stats, 0.3);
    for (size_t i = 0; i < hi.data.size(); ++i)
        if (hi.data[i] != 0.0) CHECK(lo.data[i] != 0.0);
}

TEST_CASE("random label sets match the brute-force pair-enumeration oracle") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(7));  // n <= 8
        const int count = 2 + static_cast<int>(rng.below(49));
        std::vector<MultiAttributeLabel> labels;
        for (int s = 0; s < count; ++s) {
            MultiAttributeLabel y;
            y.bits.assign(static_cast<size_t>(n), 0);
            for (int j = 0; j < n; ++j) y.bits[static_cast<size_t>(j)] = rng.uniform() < 0.35 ? 1 : 0;
            labels.push_back(y);
        }
        const auto stats = count_cooccurrence(labels);

        // oracle: direct enumeration of samples per (i, j)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                std::int64_t both = 0;
                for (const auto& y : labels)
                    if (y.bits[static_cast<size_t>(i)] && y.bits[static_cast<size_t>(j)]) ++both;
                CHECK(stats.pair_counts[static_cast<size_t>(i) * n + j] == both);
            }

        const double tau = 0.2 + 0.6 * rng.uniform();
        const Tensor c = binary_matrix(stats, tau);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const auto ci = stats.attr_counts[static_cast<size_t>(i)];
                const double pij =
                    ci > 0 ? static_cast<double>(stats.pair_counts[static_cast<size_t>(i) * n + j]) / ci : 0.0;
                CHECK(c.data[static_cast<size_t>(i) * n + j] == ((pij >= tau) ? 1.0 : 0.0));
            }
    }
}

TEST_CASE("correlation file round trip") {
    const auto corr = build_correlation(worked_example(), 0.4, 0.25);
    const auto dir = std::filesystem::temp_directory_path() / "attrgan_test_corr";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "corr.bin").string();
    save_correlation(corr, path);
    const auto back = load_correlation(path);
    CHECK(back.tau == doctest::Approx(0.4));
    CHECK(back.p == doctest::Approx(0.25));
    CHECK(back.C.data == corr.C.data);  // binary entries are exact in f32
    for (size_t i = 0; i < corr.P.data.size(); ++i) {
        CHECK(back.P.data[i] == doctest::Approx(corr.P.data[i]).epsilon(1e-6));
        CHECK(back.C_reweighted.data[i] == doctest::Approx(corr.C_reweighted.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("parameter domains are enforced") {
    const auto stats = count_cooccurrence(worked_example());
    CHECK_THROWS(binary_matrix(stats, 0.0));
    CHECK_THROWS(binary_matrix(stats, 1.5));
    const Tensor c = binary_matrix(stats, 0.4);
    CHECK_THROWS(reweight_matrix(c, 0.0));
    CHECK_THROWS(reweight_matrix(c, 1.0));
}
