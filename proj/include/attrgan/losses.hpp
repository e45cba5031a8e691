#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/autograd.hpp"
#include "attrgan/tensor.hpp"

namespace attrgan {

struct LossWeights {
    double lambda1 = 0.1;  // alignment, discriminator
    double lambda2 = 0.5;  // classification, discriminator
    double lambda3 = 2.0;  // gradient penalty
    double lambda4 = 0.1;  // alignment, generator
    double lambda5 = 0.5;  // classification, generator
    double eta = 0.1;      // contrastive temperature
    double ma_gp_exponent = 6.0;

    void validate() const;
};

// y duplicated into a 2n-vector: slot 2i is the fake copy of attribute i,
// slot 2i+1 the real copy.
struct ExtendedLabel {
    std::vector<std::uint8_t> y_real;
    std::vector<std::uint8_t> y_fake;
};

ExtendedLabel extend_label(const MultiAttributeLabel& y);
// batch form as [B,2n] targets
Tensor extend_labels_real(const Tensor& labels);
Tensor extend_labels_fake(const Tensor& labels);

// InfoNCE over row-wise cosine similarity at temperature eta
ag::Var contrastive_loss(const ag::Var& u, const ag::Var& v, double eta);

struct AlignmentLosses {
    ag::Var attr_real, attr_fake, sent_real, sent_fake, img;
    ag::Var align_d, align_g;
};

// e_a may be null (no attribute mechanism); attribute terms are then zero
AlignmentLosses alignment_losses(const ag::Var& real_emb, const ag::Var& fake_emb, const ag::Var& e_s_batch,
                                 const ag::Var* e_a_batch, double eta);

struct HingeLosses {
    ag::Var adv_d, adv_g;
};
HingeLosses hinge_losses(const ag::Var& d_real, const ag::Var& d_fake);

// mean binary cross-entropy on logits with sigmoid outputs clamped away from
// 0 and 1
ag::Var bce_loss(const ag::Var& logits, const Tensor& targets);

struct ClassificationLosses {
    ag::Var cls_d, cls_g;
};
ClassificationLosses classification_losses(const ag::Var& l_r, const ag::Var& l_f, const Tensor& y_real_ext,
                                           const Tensor& y_fake_ext);

// Matching-aware gradient penalty: mean over the batch of
// (|grad_x D| + |grad_es D|)^exponent on real, matching pairs.
using AdvLogitFn = std::function<ag::Var(const ag::Var& images, const ag::Var& e_s)>;
ag::Var ma_gp(const AdvLogitFn& adv_logit, const Tensor& real_images, const Tensor& e_s_batch, double exponent);

// same penalty from already-computed logits whose graph reaches the given
// image/sentence leaves (lets one real forward serve hinge and penalty)
ag::Var ma_gp_from_logits(const ag::Var& adv_logits, const ag::Var& image_leaf, const ag::Var& e_s_leaf,
                          double exponent);

// Every term by name plus the weighted totals for one step.
struct LossReport {
    double adv_d = 0, adv_g = 0;
    double attr_real = 0, attr_fake = 0, sent_real = 0, sent_fake = 0, img = 0;
    double align_d = 0, align_g = 0;
    double cls_d = 0, cls_g = 0;
    double ma_gp = 0;
    double total_d = 0, total_g = 0;
    std::int64_t step = 0;

    std::string to_json_line() const;
    static LossReport from_json_line(const std::string& line);
};

double total_d_objective(const LossReport& r, const LossWeights& w);
double total_g_objective(const LossReport& r, const LossWeights& w);

}  // namespace attrgan
