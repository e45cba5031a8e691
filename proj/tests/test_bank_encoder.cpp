#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/rng.hpp"
#include "attrgan/text_encoder.hpp"

using namespace attrgan;

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

TextEncoderSpec spec64() {
    TextEncoderSpec s;
    s.d = 64;
    return s;
}

}  // namespace

TEST_CASE("build_bank deduplicates preserving first occurrence") {
    const auto bank = build_bank({"red", "circle", "red"});
    REQUIRE(bank.n() == 2);
    CHECK(bank.descriptions[0] == "red");
    CHECK(bank.descriptions[1] == "circle");
    CHECK(bank.index.at("circle") == 1);
}

TEST_CASE("build_bank rejects empty input") {
    CHECK_THROWS(build_bank({}));
    CHECK_THROWS(build_bank({"ok", ""}));
}

TEST_CASE("a 312-description bank keeps all entries") {
    std::vector<std::string> descriptions;
    for (int i = 0; i < 312; ++i) descriptions.push_back("part description " + std::to_string(i));
    const auto bank = build_bank(descriptions);
    CHECK(bank.n() == 312);
}

TEST_CASE("encode_sentence is deterministic and averages token vectors") {
    const auto spec = spec64();
    const Tensor a = encode_sentence("red", spec);
    const Tensor b = encode_sentence("red", spec);
    CHECK(a.data == b.data);

    const Tensor rc = encode_sentence("red circle", spec);
    const Tensor r = token_vector("red", spec);
    const Tensor c = token_vector("circle", spec);
    for (int i = 0; i < spec.d; ++i)
        CHECK(rc.data[static_cast<size_t>(i)] ==
              doctest::Approx(0.5 * (r.data[static_cast<size_t>(i)] + c.data[static_cast<size_t>(i)])).epsilon(1e-12));
}

TEST_CASE("shared tokens raise cosine similarity") {
    const auto spec = spec64();
    const double same_token = cosine(encode_sentence("red circle", spec), encode_sentence("red square", spec));
    const double disjoint = cosine(encode_sentence("red circle", spec), encode_sentence("blue triangle", spec));
    CHECK(same_token > disjoint);
}

TEST_CASE("empty text is rejected") {
    CHECK_THROWS(encode_sentence("", spec64()));
    CHECK_THROWS(encode_sentence("   ", spec64()));
}

TEST_CASE("spec validation enforces d >= 8") {
    TextEncoderSpec bad;
    bad.d = 4;
    CHECK_THROWS(encode_sentence("red", bad));
}

TEST_CASE("encode_attributes stacks per-description embeddings") {
    const auto spec = spec64();
    const auto bank = build_bank({"red", "green", "blue", "circle", "square", "triangle"});
    const Tensor m = encode_attributes(bank, spec);
    REQUIRE(m.shape == std::vector<int>{6, 64});

    const Tensor row0 = encode_sentence("red", spec);
    for (int j = 0; j < 64; ++j) CHECK(m.data[static_cast<size_t>(j)] == row0.data[static_cast<size_t>(j)]);

    // distinct descriptions give distinct rows
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
            double diff = 0;
            for (int k = 0; k < 64; ++k)
                diff += std::abs(m.data[static_cast<size_t>(i) * 64 + k] - m.data[static_cast<size_t>(j) * 64 + k]);
            CHECK(diff > 1e-6);
        }

    const Tensor m2 = encode_attributes(bank, spec);
    CHECK(m.data == m2.data);
}

TEST_CASE("retrieve_topk matches its definition") {
    const auto spec = spec64();
    const auto bank = build_bank({"red", "green", "blue", "circle"});
    const Tensor memory = encode_attributes(bank, spec);

    SUBCASE("self-match is top-1") {
        Tensor row({64});
        std::copy_n(memory.data.begin() + 3 * 64, 64, row.data.begin());
        const auto label = retrieve_topk(row, memory, 1);
        CHECK(label.bits == std::vector<std::uint8_t>{0, 0, 0, 1});
    }

    SUBCASE("k = n selects everything") {
        const auto label = retrieve_topk(encode_sentence("anything at all", spec), memory, 4);
        CHECK(label.popcount() == 4);
    }

    SUBCASE("random queries match a brute-force cosine ranking") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor q({64});
            rng.normal_fill(q.data);
            const auto label = retrieve_topk(q, memory, 2);
            // oracle: full cosine list, sort, take top 2
            std::vector<std::pair<double, int>> sims;
            for (int i = 0; i < 4; ++i) {
                Tensor row({64});
                std::copy_n(memory.data.begin() + static_cast<size_t>(i) * 64, 64, row.data.begin());
                sims.push_back({cosine(q, row), i});
            }
            std::sort(sims.begin(), sims.end(), [](auto& a, auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::vector<std::uint8_t> expect(4, 0);
            expect[static_cast<size_t>(sims[0].second)] = 1;
            expect[static_cast<size_t>(sims[1].second)] = 1;
            CHECK(label.bits == expect);
        }
    }

    SUBCASE("positive rescaling of the query changes nothing") {
        Rng rng(6);
        Tensor q({64});
        rng.normal_fill(q.data);
        const auto a = retrieve_topk(q, memory, 2);
        Tensor q2 = q;
        for (auto& v : q2.data) v *= 37.5;
        const auto b = retrieve_topk(q2, memory, 2);
        CHECK(a.bits == b.bits);
    }

    SUBCASE("popcount equals k for every valid k") {
        Rng rng(7);
        Tensor q({64});
        rng.normal_fill(q.data);
        for (int k = 1; k <= 4; ++k) CHECK(retrieve_topk(q, memory, k).popcount() == k);
    }

    SUBCASE("zero-norm query is an error") {
        Tensor q({64});
        CHECK_THROWS(retrieve_topk(q, memory, 1));
    }

    SUBCASE("k out of range is an error") {
        Rng rng(8);
        Tensor q({64});
        rng.normal_fill(q.data);
        CHECK_THROWS(retrieve_topk(q, memory, 0));
        CHECK_THROWS(retrieve_topk(q, memory, 5));
    }
}

TEST_CASE("bank file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "attrgan_test_bank";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "bank.txt").string();
    const auto bank = build_bank({"red eyes", "black wings", "train"});
    save_bank(bank, path);
    const auto back = load_bank(path);
    CHECK(back.descriptions == bank.descriptions);
}
