#include "attrgan/losses.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace attrgan {

namespace ag = attrgan::ag;
using ag::Var;

void LossWeights::validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("LossWeights: eta must be positive");
    if (ma_gp_exponent <= 0.0) throw std::invalid_argument("LossWeights: ma_gp_exponent must be positive");
}

ExtendedLabel extend_label(const MultiAttributeLabel& y) {
    ExtendedLabel ext;
    const int n = y.n();
    ext.y_real.assign(static_cast<size_t>(2 * n), 0);
    ext.y_fake.assign(static_cast<size_t>(2 * n), 0);
    for (int i = 0; i < n; ++i) {
        if (!y.bits[static_cast<size_t>(i)]) continue;
        ext.y_fake[static_cast<size_t>(2 * i)] = 1;
        ext.y_real[static_cast<size_t>(2 * i + 1)] = 1;
    }
    return ext;
}

namespace {
Tensor extend_batch(const Tensor& labels, int offset) {
    if (labels.rank() != 2) throw std::invalid_argument("extend_labels: labels must be [B,n]");
    const int b = labels.dim(0), n = labels.dim(1);
    Tensor out({b, 2 * n});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i) * 2 * n + 2 * j + offset] = labels.data[static_cast<size_t>(i) * n + j];
    return out;
}
}  // namespace

Tensor extend_labels_real(const Tensor& labels) { return extend_batch(labels, 1); }
Tensor extend_labels_fake(const Tensor& labels) { return extend_batch(labels, 0); }

namespace {
// rows scaled to unit norm; throws on zero rows
Var normalize_rows(const Var& u, const char* who) {
    Var sq = ag::sum_rows(ag::mul(u, u));
    for (double v : sq->value.data)
        if (v <= 0.0) throw std::invalid_argument(std::string(who) + ": zero-norm row");
    return ag::scale_rows(u, ag::pow_scalar(sq, -0.5));
}
}  // namespace

Var contrastive_loss(const Var& u, const Var& v, double eta) {
    if (u->value.rank() != 2 || v->value.rank() != 2 || u->value.shape != v->value.shape)
        throw std::invalid_argument("contrastive_loss: expected matching [m,d] inputs");
    if (!(eta > 0.0)) throw std::invalid_argument("contrastive_loss: eta must be positive");
    Var un = normalize_rows(u, "contrastive_loss");
    Var vn = normalize_rows(v, "contrastive_loss");
    Var sim = ag::mul_scalar(ag::matmul(un, ag::transpose(vn)), 1.0 / eta);  // [m,m]
    Var log_denominator = ag::log(ag::sum_rows(ag::exp(sim)));               // [m]
    Var log_numerator = ag::diag(sim);
    Var per_sample = ag::sub(log_numerator, log_denominator);
    return ag::mul_scalar(ag::mean(per_sample), -1.0);
}

AlignmentLosses alignment_losses(const Var& real_emb, const Var& fake_emb, const Var& e_s_batch,
                                 const Var* e_a_batch, double eta) {
    AlignmentLosses out;
    out.sent_real = contrastive_loss(real_emb, e_s_batch, eta);
    out.sent_fake = contrastive_loss(fake_emb, e_s_batch, eta);
    out.img = contrastive_loss(real_emb, fake_emb, eta);
    if (e_a_batch) {
        out.attr_real = contrastive_loss(real_emb, *e_a_batch, eta);
        out.attr_fake = contrastive_loss(fake_emb, *e_a_batch, eta);
        out.align_d = ag::add(out.attr_real, out.sent_real);
        out.align_g = ag::add(ag::add(out.attr_fake, out.sent_fake), out.img);
    } else {
        out.attr_real = ag::scalar(0.0);
        out.attr_fake = ag::scalar(0.0);
        out.align_d = out.sent_real;
        out.align_g = ag::add(out.sent_fake, out.img);
    }
    return out;
}

HingeLosses hinge_losses(const Var& d_real, const Var& d_fake) {
    HingeLosses out;
    out.adv_d = ag::add(ag::mean(ag::relu(ag::add_scalar(ag::neg(d_real), 1.0))),
                        ag::mean(ag::relu(ag::add_scalar(d_fake, 1.0))));
    out.adv_g = ag::neg(ag::mean(d_fake));
    return out;
}

Var bce_loss(const Var& logits, const Tensor& targets) {
    check_same_shape(logits->value, targets, "bce_loss");
    Var s = ag::clamp(ag::sigmoid(logits), 1e-7, 1.0 - 1e-7);
    Var t = ag::constant(targets);
    Var one_minus_t = ag::constant([&] {
        Tensor inv(targets.shape);
        for (std::int64_t i = 0; i < inv.numel(); ++i) inv.data[i] = 1.0 - targets.data[i];
        return inv;
    }());
    Var ll = ag::add(ag::mul(t, ag::log(s)), ag::mul(one_minus_t, ag::log(ag::add_scalar(ag::neg(s), 1.0))));
    return ag::neg(ag::mean(ll));
}

ClassificationLosses classification_losses(const Var& l_r, const Var& l_f, const Tensor& y_real_ext,
                                           const Tensor& y_fake_ext) {
    ClassificationLosses out;
    out.cls_d = ag::add(bce_loss(l_r, y_real_ext), bce_loss(l_f, y_fake_ext));
    out.cls_g = ag::sub(bce_loss(l_f, y_real_ext), bce_loss(l_f, y_fake_ext));
    return out;
}

Var ma_gp_from_logits(const Var& adv_logits, const Var& image_leaf, const Var& e_s_leaf, double exponent) {
    const int b = image_leaf->value.dim(0);
    if (adv_logits->value.rank() != 1 || adv_logits->value.dim(0) != b)
        throw std::invalid_argument("ma_gp: adversarial logit must be [B]");
    if (!adv_logits->requires_grad) throw std::invalid_argument("ma_gp: gradients unavailable (graph not recorded)");

    // per-sample input gradients: D is per-sample, so grad of the sum splits
    auto grads = ag::grad(ag::sum(adv_logits), {image_leaf, e_s_leaf}, /*create_graph=*/true);
    Var gx = ag::reshape(grads[0], {b, static_cast<int>(image_leaf->value.numel() / b)});
    Var ge = grads[1];
    Var norm_x = ag::sqrt(ag::sum_rows(ag::mul(gx, gx)));
    Var norm_e = ag::sqrt(ag::sum_rows(ag::mul(ge, ge)));
    return ag::mean(ag::pow_scalar(ag::add(norm_x, norm_e), exponent));
}

Var ma_gp(const AdvLogitFn& adv_logit, const Tensor& real_images, const Tensor& e_s_batch, double exponent) {
    if (real_images.rank() != 4 || e_s_batch.rank() != 2)
        throw std::invalid_argument("ma_gp: expected [B,3,H,W] images and [B,d] sentence embeddings");
    const int b = real_images.dim(0);
    if (e_s_batch.dim(0) != b) throw std::invalid_argument("ma_gp: batch size mismatch");

    Var x = ag::make_var(real_images, true);
    Var es = ag::make_var(e_s_batch, true);
    return ma_gp_from_logits(adv_logit(x, es), x, es, exponent);
}

std::string LossReport::to_json_line() const {
    nlohmann::json j;
    j["step"] = step;
    j["adv_d"] = adv_d;
    j["adv_g"] = adv_g;
    j["attr_real"] = attr_real;
    j["attr_fake"] = attr_fake;
    j["sent_real"] = sent_real;
    j["sent_fake"] = sent_fake;
    j["img"] = img;
    j["align_d"] = align_d;
    j["align_g"] = align_g;
    j["cls_d"] = cls_d;
    j["cls_g"] = cls_g;
    j["ma_gp"] = ma_gp;
    j["total_d"] = total_d;
    j["total_g"] = total_g;
    return j.dump();
}

LossReport LossReport::from_json_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    LossReport r;
    r.step = j.at("step").get<std::int64_t>();
    r.adv_d = j.at("adv_d").get<double>();
    r.adv_g = j.at("adv_g").get<double>();
    r.attr_real = j.at("attr_real").get<double>();
    r.attr_fake = j.at("attr_fake").get<double>();
    r.sent_real = j.at("sent_real").get<double>();
    r.sent_fake = j.at("sent_fake").get<double>();
    r.img = j.at("img").get<double>();
    r.align_d = j.at("align_d").get<double>();
    r.align_g = j.at("align_g").get<double>();
    r.cls_d = j.at("cls_d").get<double>();
    r.cls_g = j.at("cls_g").get<double>();
    r.ma_gp = j.at("ma_gp").get<double>();
    r.total_d = j.at("total_d").get<double>();
    r.total_g = j.at("total_g").get<double>();
    return r;
}

double total_d_objective(const LossReport& r, const LossWeights& w) {
    return r.adv_d + w.lambda1 * r.align_d + w.lambda2 * r.cls_d + w.lambda3 * r.ma_gp;
}

double total_g_objective(const LossReport& r, const LossWeights& w) {
    return r.adv_g + w.lambda4 * r.align_g + w.lambda5 * r.cls_g;
}

}  // namespace attrgan
