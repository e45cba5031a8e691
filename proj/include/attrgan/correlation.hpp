#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/tensor.hpp"

namespace attrgan {

// Exact co-occurrence counts over a label set.
struct CooccurrenceStats {
    int n = 0;
    std::vector<std::int64_t> attr_counts;  // [n]
    std::vector<std::int64_t> pair_counts;  // [n*n], symmetric, diag == attr_counts
};

// P[i][j] = pair(i,j) / count(i), C = threshold at tau, C' = re-weighted C.
struct CorrelationMatrices {
    Tensor P;             // [n,n]
    Tensor C;             // [n,n], entries in {0,1}
    Tensor C_reweighted;  // [n,n]
    double tau = 0.4;
    double p = 0.25;
};

CooccurrenceStats count_cooccurrence(const std::vector<MultiAttributeLabel>& labels);

// conditional probability of j given i; rows of never-seen attributes are zero
Tensor probability_matrix(const CooccurrenceStats& stats);

// C[i][j] = 1 iff P[i][j] >= tau
Tensor binary_matrix(const CooccurrenceStats& stats, double tau);

// off-diagonal: p / (#off-diagonal neighbours in row i) where C=1, else 0;
// diagonal: 1-p everywhere; isolated rows keep all off-diagonal entries 0
Tensor reweight_matrix(const Tensor& C, double p);

CorrelationMatrices build_correlation(const std::vector<MultiAttributeLabel>& labels, double tau, double p);

// dimension-prefixed little-endian float32 row-major serialization
void save_correlation(const CorrelationMatrices& corr, const std::string& path);
CorrelationMatrices load_correlation(const std::string& path);

}  // namespace attrgan
