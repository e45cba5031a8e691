#include "attrgan/attribute_bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace attrgan {

AttributeBank build_bank(const std::vector<std::string>& descriptions) {
    if (descriptions.empty()) throw std::invalid_argument("build_bank: empty description list");
    AttributeBank bank;
    for (const auto& d : descriptions) {
        if (d.empty()) throw std::invalid_argument("build_bank: empty description");
        if (bank.index.count(d)) continue;
        bank.index.emplace(d, bank.n());
        bank.descriptions.push_back(d);
    }
    return bank;
}

void save_bank(const AttributeBank& bank, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_bank: cannot open " + path);
    for (const auto& d : bank.descriptions) f << d << "\n";
    if (!f) throw std::runtime_error("save_bank: write failed for " + path);
}

AttributeBank load_bank(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_bank: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) lines.push_back(line);
    if (lines.empty()) throw std::runtime_error("load_bank: no descriptions in " + path);
    return build_bank(lines);
}

MultiAttributeLabel retrieve_topk(const Tensor& sentence_embedding, const Tensor& memory_rows, int k) {
    if (sentence_embedding.rank() != 1) throw std::invalid_argument("retrieve_topk: sentence embedding must be 1-d");
    if (memory_rows.rank() != 2) throw std::invalid_argument("retrieve_topk: memory must be 2-d");
    const int n = memory_rows.dim(0);
    const int d = memory_rows.dim(1);
    if (sentence_embedding.dim(0) != d) throw std::invalid_argument("retrieve_topk: dimension mismatch");
    if (k < 1 || k > n) throw std::invalid_argument("retrieve_topk: k must be in [1, n]");

    double snorm = 0.0;
    for (double v : sentence_embedding.data) snorm += v * v;
    snorm = std::sqrt(snorm);
    if (snorm == 0.0) throw std::invalid_argument("retrieve_topk: zero-norm sentence embedding");

    std::vector<std::pair<double, int>> sims(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double dot = 0.0, rnorm = 0.0;
        const double* row = memory_rows.data.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            dot += row[j] * sentence_embedding.data[static_cast<size_t>(j)];
            rnorm += row[j] * row[j];
        }
        rnorm = std::sqrt(rnorm);
        const double cosv = rnorm > 0.0 ? dot / (snorm * rnorm) : -2.0;  // zero rows rank last
        sims[static_cast<size_t>(i)] = {cosv, i};
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    MultiAttributeLabel label;
    label.bits.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < k; ++i) label.bits[static_cast<size_t>(sims[static_cast<size_t>(i)].second)] = 1;
    return label;
}

}  // namespace attrgan
