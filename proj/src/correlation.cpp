#include "attrgan/correlation.hpp"

#include <cstring>
#include <stdexcept>

#include "attrgan/serialize.hpp"

namespace attrgan {

CooccurrenceStats count_cooccurrence(const std::vector<MultiAttributeLabel>& labels) {
    if (labels.empty()) throw std::invalid_argument("count_cooccurrence: empty label list");
    const int n = labels[0].n();
    CooccurrenceStats stats;
    stats.n = n;
    stats.attr_counts.assign(static_cast<size_t>(n), 0);
    stats.pair_counts.assign(static_cast<size_t>(n) * n, 0);
    for (const auto& label : labels) {
        if (label.n() != n) throw std::invalid_argument("count_cooccurrence: mixed label lengths");
        std::vector<int> active;
        for (int i = 0; i < n; ++i)
            if (label.bits[static_cast<size_t>(i)]) active.push_back(i);
        for (int i : active) {
            stats.attr_counts[static_cast<size_t>(i)] += 1;
            for (int j : active) stats.pair_counts[static_cast<size_t>(i) * n + j] += 1;
        }
    }
    return stats;
}

Tensor probability_matrix(const CooccurrenceStats& stats) {
    const int n = stats.n;
    Tensor p({n, n});
    for (int i = 0; i < n; ++i) {
        const auto ci = stats.attr_counts[static_cast<size_t>(i)];
        if (ci == 0) continue;  // never-seen attribute: zero row
        for (int j = 0; j < n; ++j)
            p.data[static_cast<size_t>(i) * n + j] =
                static_cast<double>(stats.pair_counts[static_cast<size_t>(i) * n + j]) / static_cast<double>(ci);
    }
    return p;
}

Tensor binary_matrix(const CooccurrenceStats& stats, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("binary_matrix: tau must be in (0, 1]");
    const Tensor p = probability_matrix(stats);
    const int n = stats.n;
    Tensor c({n, n});
    for (std::int64_t i = 0; i < c.numel(); ++i) c.data[i] = p.data[i] >= tau ? 1.0 : 0.0;
    return c;
}

Tensor reweight_matrix(const Tensor& C, double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("reweight_matrix: p must be in (0, 1)");
    if (C.rank() != 2 || C.dim(0) != C.dim(1)) throw std::invalid_argument("reweight_matrix: C must be square");
    const int n = C.dim(0);
    Tensor out({n, n});
    for (int i = 0; i < n; ++i) {
        int neighbours = 0;
        for (int j = 0; j < n; ++j)
            if (j != i && C.data[static_cast<size_t>(i) * n + j] != 0.0) ++neighbours;
        for (int j = 0; j < n; ++j) {
            if (j == i) {
                out.data[static_cast<size_t>(i) * n + j] = 1.0 - p;
            } else if (neighbours > 0 && C.data[static_cast<size_t>(i) * n + j] != 0.0) {
                out.data[static_cast<size_t>(i) * n + j] = p / static_cast<double>(neighbours);
            }
        }
    }
    return out;
}

CorrelationMatrices build_correlation(const std::vector<MultiAttributeLabel>& labels, double tau, double p) {
    const auto stats = count_cooccurrence(labels);
    CorrelationMatrices corr;
    corr.tau = tau;
    corr.p = p;
    corr.P = probability_matrix(stats);
    corr.C = binary_matrix(stats, tau);
    corr.C_reweighted = reweight_matrix(corr.C, p);
    return corr;
}

namespace {
constexpr std::uint32_t kCorrMagic = 0x52524f43;  // "CORR"
}

void save_correlation(const CorrelationMatrices& corr, const std::string& path) {
    ByteWriter w;
    w.put_u32(kCorrMagic);
    w.put_u32(1);  // version
    w.put_f32(static_cast<float>(corr.tau));
    w.put_f32(static_cast<float>(corr.p));
    w.put_tensor_f32(corr.P);
    w.put_tensor_f32(corr.C);
    w.put_tensor_f32(corr.C_reweighted);
    atomic_write_file(path, w.bytes);
}

CorrelationMatrices load_correlation(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (r.get_u32() != kCorrMagic) throw std::runtime_error("load_correlation: bad magic in " + path);
    if (r.get_u32() != 1) throw std::runtime_error("load_correlation: unsupported version in " + path);
    CorrelationMatrices corr;
    corr.tau = r.get_f32();
    corr.p = r.get_f32();
    corr.P = r.get_tensor_f32();
    corr.C = r.get_tensor_f32();
    corr.C_reweighted = r.get_tensor_f32();
    return corr;
}

}  // namespace attrgan
