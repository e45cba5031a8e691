#include "attrgan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace attrgan {

namespace {
constexpr double kLeakySlope = 0.2;

Tensor gaussian_tensor(std::vector<int> shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = std_dev * rng.normal();
    return t;
}
}  // namespace

void Linear::init(int in, int out, Rng& rng, double gain) {
    const double std_dev = gain / std::sqrt(static_cast<double>(in));
    w = ag::make_var(gaussian_tensor({in, out}, rng, std_dev), true);
    b = ag::make_var(Tensor({out}), true);
}

ag::Var Linear::forward(const ag::Var& x) const { return ag::add_rowvec(ag::matmul(x, w), b); }

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

void Conv::init(int cin, int cout, int k, int stride_, int pad_, Rng& rng, double gain) {
    stride = stride_;
    pad = pad_;
    const double std_dev = gain / std::sqrt(static_cast<double>(cin) * k * k);
    w = ag::make_var(gaussian_tensor({cout, cin, k, k}, rng, std_dev), true);
    b = ag::make_var(Tensor({cout}), true);
}

ag::Var Conv::forward(const ag::Var& x) const { return ag::add_channel_bias(ag::conv2d(x, w, stride, pad), b); }

void Conv::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

void AffineCond::init(int cond_dim, int hidden, int channels_, Rng& rng) {
    channels = channels_;
    fc1.init(cond_dim, hidden, rng, 1.0);
    fc2.init(hidden, 2 * channels_, rng, 0.2);  // small initial modulation
}

ag::Var AffineCond::forward(const ag::Var& x, const ag::Var& cond) const {
    ag::Var h = ag::leaky_relu(fc1.forward(cond), kLeakySlope);
    ag::Var gamma_beta = fc2.forward(h);  // [B, 2C]
    ag::Var gamma = ag::slice_cols(gamma_beta, 0, channels);
    ag::Var beta = ag::slice_cols(gamma_beta, channels, channels);
    return ag::add_channel(ag::mul_channel(x, ag::add_scalar(gamma, 1.0)), beta);
}

void AffineCond::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

void UpFusionBlock::init(int cin, int cout, int cond_dim, Rng& rng) {
    channel_change = cin != cout;
    conv1.init(cin, cout, 3, 1, 1, rng);
    conv2.init(cout, cout, 3, 1, 1, rng);
    if (channel_change) shortcut.init(cin, cout, 1, 1, 0, rng);
    aff1.init(cond_dim, cond_dim, cin, rng);
    aff2.init(cond_dim, cond_dim, cout, rng);
}

ag::Var UpFusionBlock::forward(const ag::Var& x, const ag::Var& cond1, const ag::Var& cond2) const {
    ag::Var up = ag::upsample2x(x);
    ag::Var h = ag::leaky_relu(aff1.forward(up, cond1), kLeakySlope);
    h = conv1.forward(h);
    h = ag::leaky_relu(aff2.forward(h, cond2), kLeakySlope);
    h = conv2.forward(h);
    ag::Var sc = channel_change ? shortcut.forward(up) : up;
    return ag::add(sc, h);
}

void UpFusionBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    if (channel_change) shortcut.collect(prefix + ".shortcut", out);
    aff1.collect(prefix + ".aff1", out);
    aff2.collect(prefix + ".aff2", out);
}

std::vector<int> GeneratorConfig::widths() const {
    std::vector<int> w(static_cast<size_t>(num_blocks));
    for (int i = 0; i < num_blocks; ++i) w[static_cast<size_t>(i)] = base_channels << (num_blocks - 1 - i);
    return w;
}

void GeneratorConfig::validate() const {
    if (z_dim < 1 || d < 8 || base_channels < 1) throw std::invalid_argument("GeneratorConfig: bad dimensions");
    if (num_blocks < 1 || num_blocks > 6) throw std::invalid_argument("GeneratorConfig: num_blocks out of range");
    const bool ob_ot = placement == Placement::ob_ot_attr_low || placement == Placement::ob_ot_sent_low;
    if (ob_ot && num_blocks < 2)
        throw std::invalid_argument("GeneratorConfig: one-type placements need num_blocks >= 2");
}

void Generator::init(const GeneratorConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    const auto w = cfg.widths();
    fc.init(cfg.z_dim, 16 * w[0], rng);
    blocks.clear();
    for (int i = 0; i < cfg.num_blocks; ++i) {
        UpFusionBlock blk;
        blk.init(i == 0 ? w[0] : w[static_cast<size_t>(i - 1)], w[static_cast<size_t>(i)], cfg.d, rng);
        blocks.push_back(std::move(blk));
    }
    to_rgb.init(w.back(), 3, 3, 1, 1, rng);
}

ag::Var Generator::forward(const ag::Var& z, const ag::Var* e_s, const ag::Var* e_a) const {
    const bool need_s = cfg.conditioning != Conditioning::attribute_only;
    const bool need_a = cfg.conditioning != Conditioning::sentence_only;
    if (need_s && !e_s) throw std::invalid_argument("generator: sentence embedding required in this mode");
    if (need_a && !e_a) throw std::invalid_argument("generator: attribute embedding required in this mode");

    const auto w = cfg.widths();
    ag::Var h = ag::reshape(fc.forward(z), {z->value.dim(0), w[0], 4, 4});
    const int low_blocks = cfg.num_blocks / 2;
    for (int i = 0; i < cfg.num_blocks; ++i) {
        const ag::Var* c1 = nullptr;
        const ag::Var* c2 = nullptr;
        if (cfg.conditioning == Conditioning::sentence_only) {
            c1 = c2 = e_s;
        } else if (cfg.conditioning == Conditioning::attribute_only) {
            c1 = c2 = e_a;
        } else {
            switch (cfg.placement) {
                case Placement::ob_ot_attr_low: c1 = c2 = (i < low_blocks) ? e_a : e_s; break;
                case Placement::ob_ot_sent_low: c1 = c2 = (i < low_blocks) ? e_s : e_a; break;
                case Placement::ob_tt_sent_front: c1 = e_s, c2 = e_a; break;
                case Placement::ob_tt_attr_front: c1 = e_a, c2 = e_s; break;
            }
        }
        h = blocks[static_cast<size_t>(i)].forward(h, *c1, *c2);
    }
    return ag::tanh(to_rgb.forward(ag::leaky_relu(h, kLeakySlope)));
}

void Generator::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    fc.collect(prefix + ".fc", out);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    to_rgb.collect(prefix + ".to_rgb", out);
}

void DownBlock::init(int cin, int cout, Rng& rng) {
    conv1.init(cin, cout, 3, 1, 1, rng);
    conv2.init(cout, cout, 3, 1, 1, rng);
    shortcut.init(cin, cout, 1, 1, 0, rng);
}

ag::Var DownBlock::forward(const ag::Var& x) const {
    ag::Var h = ag::leaky_relu(conv1.forward(x), kLeakySlope);
    h = ag::leaky_relu(conv2.forward(h), kLeakySlope);
    h = ag::avg_pool2x(h);
    ag::Var sc = ag::avg_pool2x(shortcut.forward(x));
    return ag::add(sc, h);
}

void DownBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    shortcut.collect(prefix + ".shortcut", out);
}

void DiscriminatorConfig::validate() const {
    if (base_channels < 1 || d < 8 || n_attrs < 1) throw std::invalid_argument("DiscriminatorConfig: bad dimensions");
    int s = image_size;
    int levels = 0;
    while (s > 4 && s % 2 == 0) {
        s /= 2;
        ++levels;
    }
    if (s != 4) throw std::invalid_argument("DiscriminatorConfig: image_size must be 4 * 2^k");
    if (levels < 1) throw std::invalid_argument("DiscriminatorConfig: image_size too small");
}

void Discriminator::init(const DiscriminatorConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    const int levels = [&] {
        int s = cfg.image_size, l = 0;
        while (s > 4) {
            s /= 2;
            ++l;
        }
        return l;
    }();
    stem.init(3, cfg.base_channels, 3, 1, 1, rng);
    blocks.clear();
    int ch = cfg.base_channels;
    for (int i = 0; i < levels; ++i) {
        const int next = std::min(ch * 2, cfg.base_channels * 8);
        DownBlock blk;
        blk.init(ch, next, rng);
        blocks.push_back(std::move(blk));
        ch = next;
    }
    img_proj.init(ch, cfg.d, rng);
    joint_conv.init(ch + cfg.d, ch, 3, 1, 1, rng);
    adv_conv.init(ch, 1, 4, 1, 0, rng);
    cls_head.init(ch + cfg.d, 2 * cfg.n_attrs, rng);
}

namespace {
ag::Var backbone_forward(const Discriminator& d, const ag::Var& image) {
    if (image.get() == nullptr) throw std::invalid_argument("discriminator: null image");
    const auto& s = image->value.shape;
    if (s.size() != 4 || s[1] != 3 || s[2] != d.cfg.image_size || s[3] != d.cfg.image_size)
        throw std::invalid_argument("discriminator: expected [B,3," + std::to_string(d.cfg.image_size) + "," +
                                    std::to_string(d.cfg.image_size) + "] input, got " + image->value.shape_str());
    ag::Var h = ag::leaky_relu(d.stem.forward(image), kLeakySlope);
    for (const auto& blk : d.blocks) h = blk.forward(h);
    return h;
}

ag::Var joint_map(const ag::Var& feat, const ag::Var& e_s) {
    ag::Var es_map = ag::broadcast_hw(e_s, feat->value.dim(2), feat->value.dim(3));
    return ag::concat_channels(feat, es_map);
}

ag::Var adv_from_joint(const Discriminator& d, const ag::Var& joint) {
    ag::Var h = ag::leaky_relu(d.joint_conv.forward(joint), kLeakySlope);
    ag::Var logit = d.adv_conv.forward(h);  // [B,1,1,1]
    return ag::reshape(logit, {logit->value.dim(0)});
}
}  // namespace

DiscriminatorOut Discriminator::forward(const ag::Var& image, const ag::Var& e_s) const {
    ag::Var feat = backbone_forward(*this, image);
    DiscriminatorOut out;
    out.emb = img_proj.forward(ag::global_avg_pool(feat));  // before any sentence input
    ag::Var joint = joint_map(feat, e_s);
    out.adv = adv_from_joint(*this, joint);
    out.cls = cls_head.forward(ag::global_avg_pool(joint));
    return out;
}

ag::Var Discriminator::adv_logit(const ag::Var& image, const ag::Var& e_s) const {
    return adv_from_joint(*this, joint_map(backbone_forward(*this, image), e_s));
}

void Discriminator::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    stem.collect(prefix + ".stem", out);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    img_proj.collect(prefix + ".img_proj", out);
    joint_conv.collect(prefix + ".joint_conv", out);
    adv_conv.collect(prefix + ".adv_conv", out);
    cls_head.collect(prefix + ".cls_head", out);
}

Adam::Adam(std::vector<ag::Var> params_, double lr_, double b1, double b2)
    : lr(lr_), beta1(b1), beta2(b2), params(std::move(params_)) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
        m.emplace_back(Tensor::zeros(p->value.shape));
        v.emplace_back(Tensor::zeros(p->value.shape));
    }
}

void Adam::step(const std::vector<ag::Var>& grads) {
    if (grads.size() != params.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& pv = params[i]->value;
        const auto& g = grads[i]->value;
        check_same_shape(pv, g, "Adam::step");
        for (std::int64_t j = 0; j < pv.numel(); ++j) {
            const double gj = g.data[j];
            m[i].data[j] = beta1 * m[i].data[j] + (1.0 - beta1) * gj;
            v[i].data[j] = beta2 * v[i].data[j] + (1.0 - beta2) * gj * gj;
            const double mhat = m[i].data[j] / bc1;
            const double vhat = v[i].data[j] / bc2;
            pv.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void Adam::save(ByteWriter& w) const {
    w.put_i64(t);
    w.put_u64(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        w.put_tensor_f64(m[i]);
        w.put_tensor_f64(v[i]);
    }
}

void Adam::load(ByteReader& r) {
    t = r.get_i64();
    const auto count = r.get_u64();
    if (count != params.size()) throw std::runtime_error("Adam::load: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = r.get_tensor_f64();
        v[i] = r.get_tensor_f64();
        check_same_shape(m[i], params[i]->value, "Adam::load");
    }
}

}  // namespace attrgan
