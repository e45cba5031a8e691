#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/nn.hpp"
#include "attrgan/tensor.hpp"
#include "attrgan/toy_dataset.hpp"
#include "attrgan/trainer.hpp"

namespace attrgan {

enum class ExtractorKind { discriminator_embedding, random_projection, external };

struct FeatureExtractorSpec {
    ExtractorKind kind = ExtractorKind::random_projection;
    int dim = 48;
    std::uint64_t seed = 0;
    std::string external_path;
};

// Frechet distance between Gaussian fits of two feature sets [m,d]; matrix
// square root via eigendecomposition with negative eigenvalues clipped at 0.
double fid(const Tensor& features_a, const Tensor& features_b);

// fraction of rows whose cosine-nearest text row is their own index
double top1_retrieval_accuracy(const Tensor& image_embs, const Tensor& text_embs);

// mean over attributes (with at least one positive) of average precision of
// the score-ranked sample list
double multiattr_map(const Tensor& scores, const Tensor& labels);

// Frozen random convolutional feature extractor, deterministic from seed.
// Stands in for a pretrained backbone at desk scale: only relative distances
// matter here. Input images are [B,3,H,W] in [-1,1].
class RandomProjectionExtractor {
public:
    RandomProjectionExtractor(int dim, std::uint64_t seed);
    Tensor features(const Tensor& images) const;
    int dim() const { return dim_; }

private:
    int dim_ = 0;
    Conv c1_, c2_, c3_;
    Linear proj_;
};

// Small multi-label conv net trained on the real toy data; its sigmoid
// outputs score generated images for the mAP metric.
class AttributeClassifier {
public:
    AttributeClassifier(int n, std::uint64_t seed);
    // images in [-1,1] stacked [B,3,H,W]; labels [B,n]
    void train(const Tensor& images, const Tensor& labels, int steps, int batch_size, double lr,
               std::uint64_t seed);
    Tensor scores(const Tensor& images) const;  // sigmoid outputs [B,n]

private:
    int n_ = 0;
    Conv c1_, c2_, c3_;
    Linear head_;
    std::vector<ag::Var> params_;
};

struct MetricReport {
    double fid = 0.0;
    double top1_acc = 0.0;
    double map = 0.0;

    std::string to_json() const;
};

struct EvalOptions {
    FeatureExtractorSpec extractor;
    int num_fakes = 256;
    double holdout_fraction = 0.125;  // tail records provide conditioning
    std::uint64_t seed = 0;
    int classifier_steps = 400;
    int batch_size = 16;
};

// Generates num_fakes images conditioned on held-out captions/labels, then
// FID against the real set, Top-1 retrieval with the discriminator image
// embedding, and mAP from a classifier trained on real data.
MetricReport evaluate_checkpoint(TrainSession& session, const DatasetCache& data, const EvalOptions& opts);

// convenience: stacks [count,3,H,W] in [-1,1] from dataset images
Tensor stack_real_images(const DatasetCache& data, int offset, int count);
Tensor stack_real_labels(const DatasetCache& data, int offset, int count);

}  // namespace attrgan
