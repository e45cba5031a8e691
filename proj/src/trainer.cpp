#include "attrgan/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "attrgan/image_io.hpp"
#include "attrgan/serialize.hpp"

namespace fs = std::filesystem;

namespace attrgan {

namespace {

int blocks_for_size(int image_size) {
    int s = image_size, blocks = 0;
    while (s > 4 && s % 2 == 0) {
        s /= 2;
        ++blocks;
    }
    if (s != 4) throw std::invalid_argument("image size must be 4 * 2^k, got " + std::to_string(image_size));
    return blocks;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t x = base ^ (salt * 0x9e3779b97f4a7c15ULL);
    return splitmix64(x);
}

std::uint64_t epoch_seed(std::uint64_t base, std::int64_t epoch) {
    return derive_seed(base, 0xe50c0000ULL + static_cast<std::uint64_t>(epoch));
}

template <typename T>
std::string enum_to_string(T v, const std::vector<std::pair<T, const char*>>& table) {
    for (const auto& [key, name] : table)
        if (key == v) return name;
    throw std::logic_error("enum_to_string: unmapped value");
}

template <typename T>
T enum_from_string(const std::string& s, const std::vector<std::pair<T, const char*>>& table, const char* what) {
    for (const auto& [key, name] : table)
        if (s == name) return key;
    throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

const std::vector<std::pair<Mechanism, const char*>>& mechanism_names() {
    static const std::vector<std::pair<Mechanism, const char*>> t = {
        {Mechanism::none, "none"}, {Mechanism::sample_aware, "sample_aware"}, {Mechanism::sample_joint, "sample_joint"}};
    return t;
}
const std::vector<std::pair<LabelSource, const char*>>& label_source_names() {
    static const std::vector<std::pair<LabelSource, const char*>> t = {{LabelSource::dataset, "dataset"},
                                                                       {LabelSource::retrieved, "retrieved"}};
    return t;
}
const std::vector<std::pair<Conditioning, const char*>>& conditioning_names() {
    static const std::vector<std::pair<Conditioning, const char*>> t = {{Conditioning::joint, "joint"},
                                                                        {Conditioning::sentence_only, "sentence_only"},
                                                                        {Conditioning::attribute_only, "attribute_only"}};
    return t;
}
const std::vector<std::pair<Placement, const char*>>& placement_names() {
    static const std::vector<std::pair<Placement, const char*>> t = {
        {Placement::ob_ot_attr_low, "ob_ot_attr_low"},
        {Placement::ob_ot_sent_low, "ob_ot_sent_low"},
        {Placement::ob_tt_sent_front, "ob_tt_sent_front"},
        {Placement::ob_tt_attr_front, "ob_tt_attr_front"}};
    return t;
}
const std::vector<std::pair<MemoryInit, const char*>>& memory_init_names() {
    static const std::vector<std::pair<MemoryInit, const char*>> t = {
        {MemoryInit::attribute_embeddings, "attribute_embeddings"}, {MemoryInit::random_noise, "random_noise"}};
    return t;
}
const std::vector<std::pair<MemoryUpdate, const char*>>& memory_update_names() {
    static const std::vector<std::pair<MemoryUpdate, const char*>> t = {{MemoryUpdate::learnable, "learnable"},
                                                                        {MemoryUpdate::frozen, "frozen"}};
    return t;
}
const std::vector<std::pair<Pooling, const char*>>& pooling_names() {
    static const std::vector<std::pair<Pooling, const char*>> t = {{Pooling::sum, "sum"}, {Pooling::mean, "mean"}};
    return t;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_finite(std::int64_t step, std::initializer_list<std::pair<const char*, const ag::Var*>> terms) {
    for (const auto& [name, var] : terms) {
        if (!std::isfinite((*var)->value.item()))
            throw std::runtime_error("non-finite loss term '" + std::string(name) + "' at step " +
                                     std::to_string(step + 1));
    }
}

}  // namespace

void TrainConfig::validate() const {
    weights.validate();
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
    if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (mechanism == Mechanism::none && conditioning != Conditioning::sentence_only)
        throw std::invalid_argument("TrainConfig: mechanism=none requires sentence_only conditioning");
    if (mechanism == Mechanism::none && label_source == LabelSource::retrieved)
        throw std::invalid_argument("TrainConfig: retrieval needs an attribute mechanism");
    if (conditioning == Conditioning::attribute_only && mechanism == Mechanism::none)
        throw std::invalid_argument("TrainConfig: attribute_only conditioning needs an attribute mechanism");
    if (retrieval_k < 1) throw std::invalid_argument("TrainConfig: retrieval_k must be >= 1");
    if (gcn_layers < 1 || gcn_layers > 4) throw std::invalid_argument("TrainConfig: gcn_layers must be in [1,4]");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("TrainConfig: tau must be in (0,1]");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("TrainConfig: p must be in (0,1)");
    if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every must be >= 1");
}

std::string TrainConfig::to_kv() const {
    std::ostringstream s;
    s << "batch_size=" << batch_size << "\n";
    s << "total_steps=" << total_steps << "\n";
    s << "lr_g=" << fmt_double(lr_g) << "\n";
    s << "lr_d=" << fmt_double(lr_d) << "\n";
    s << "adam_beta1=" << fmt_double(adam_beta1) << "\n";
    s << "adam_beta2=" << fmt_double(adam_beta2) << "\n";
    s << "lambda1=" << fmt_double(weights.lambda1) << "\n";
    s << "lambda2=" << fmt_double(weights.lambda2) << "\n";
    s << "lambda3=" << fmt_double(weights.lambda3) << "\n";
    s << "lambda4=" << fmt_double(weights.lambda4) << "\n";
    s << "lambda5=" << fmt_double(weights.lambda5) << "\n";
    s << "eta=" << fmt_double(weights.eta) << "\n";
    s << "ma_gp_exponent=" << fmt_double(weights.ma_gp_exponent) << "\n";
    s << "mechanism=" << enum_to_string(mechanism, mechanism_names()) << "\n";
    s << "alignment_enabled=" << (alignment_enabled ? "true" : "false") << "\n";
    s << "conditioning=" << enum_to_string(conditioning, conditioning_names()) << "\n";
    s << "label_source=" << enum_to_string(label_source, label_source_names()) << "\n";
    s << "retrieval_k=" << retrieval_k << "\n";
    s << "memory_init=" << enum_to_string(memory_init, memory_init_names()) << "\n";
    s << "memory_update=" << enum_to_string(memory_update, memory_update_names()) << "\n";
    s << "pooling=" << enum_to_string(pooling, pooling_names()) << "\n";
    s << "gcn_layers=" << gcn_layers << "\n";
    s << "gcn_leaky_slope=" << fmt_double(gcn_leaky_slope) << "\n";
    s << "tau=" << fmt_double(tau) << "\n";
    s << "p=" << fmt_double(p) << "\n";
    s << "d=" << d << "\n";
    s << "z_dim=" << z_dim << "\n";
    s << "g_base=" << g_base << "\n";
    s << "d_base=" << d_base << "\n";
    s << "placement=" << enum_to_string(placement, placement_names()) << "\n";
    s << "seed=" << seed << "\n";
    s << "vocab_seed=" << vocab_seed << "\n";
    s << "log_every=" << log_every << "\n";
    s << "checkpoint_every=" << checkpoint_every << "\n";
    s << "grid_every=" << grid_every << "\n";
    s << "prefetch=" << (prefetch ? "true" : "false") << "\n";
    s << "out_dir=" << out_dir << "\n";
    return s.str();
}

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
    auto as_bool = [&](const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw std::invalid_argument("bad boolean for " + key + ": " + v);
    };
    try {
        if (key == "batch_size") batch_size = std::stoi(value);
        else if (key == "total_steps") total_steps = std::stoi(value);
        else if (key == "lr_g") lr_g = std::stod(value);
        else if (key == "lr_d") lr_d = std::stod(value);
        else if (key == "adam_beta1") adam_beta1 = std::stod(value);
        else if (key == "adam_beta2") adam_beta2 = std::stod(value);
        else if (key == "lambda1") weights.lambda1 = std::stod(value);
        else if (key == "lambda2") weights.lambda2 = std::stod(value);
        else if (key == "lambda3") weights.lambda3 = std::stod(value);
        else if (key == "lambda4") weights.lambda4 = std::stod(value);
        else if (key == "lambda5") weights.lambda5 = std::stod(value);
        else if (key == "eta") weights.eta = std::stod(value);
        else if (key == "ma_gp_exponent") weights.ma_gp_exponent = std::stod(value);
        else if (key == "mechanism") mechanism = enum_from_string(value, mechanism_names(), "mechanism");
        else if (key == "alignment_enabled") alignment_enabled = as_bool(value);
        else if (key == "conditioning") conditioning = enum_from_string(value, conditioning_names(), "conditioning");
        else if (key == "label_source") label_source = enum_from_string(value, label_source_names(), "label_source");
        else if (key == "retrieval_k") retrieval_k = std::stoi(value);
        else if (key == "memory_init") memory_init = enum_from_string(value, memory_init_names(), "memory_init");
        else if (key == "memory_update") memory_update = enum_from_string(value, memory_update_names(), "memory_update");
        else if (key == "pooling") pooling = enum_from_string(value, pooling_names(), "pooling");
        else if (key == "gcn_layers") gcn_layers = std::stoi(value);
        else if (key == "gcn_leaky_slope") gcn_leaky_slope = std::stod(value);
        else if (key == "tau") tau = std::stod(value);
        else if (key == "p") p = std::stod(value);
        else if (key == "d") d = std::stoi(value);
        else if (key == "z_dim") z_dim = std::stoi(value);
        else if (key == "g_base") g_base = std::stoi(value);
        else if (key == "d_base") d_base = std::stoi(value);
        else if (key == "placement") placement = enum_from_string(value, placement_names(), "placement");
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "vocab_seed") vocab_seed = std::stoull(value);
        else if (key == "log_every") log_every = std::stoi(value);
        else if (key == "checkpoint_every") checkpoint_every = std::stoi(value);
        else if (key == "grid_every") grid_every = std::stoi(value);
        else if (key == "prefetch") prefetch = as_bool(value);
        else if (key == "out_dir") out_dir = value;
        else throw std::invalid_argument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception&) {
        throw std::invalid_argument("bad value for config key " + key + ": " + value);
    }
}

TrainConfig TrainConfig::from_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config " + path + ": line " + std::to_string(lineno) + " is not key=value");
        cfg.apply_kv(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

std::string TrainConfig::effective_out_dir() const {
    if (const char* env = std::getenv("ATTRGAN_OUT"); env && *env) return env;
    return out_dir;
}

// ---- TrainSession ----

TrainSession::TrainSession(std::shared_ptr<const DatasetCache> data, const TrainConfig& cfg) {
    if (!data) throw std::invalid_argument("TrainSession: dataset required");
    cfg.validate();
    data_ = std::move(data);
    cfg_ = cfg;

    const auto& manifest = data_->manifest;
    const std::string bank_path = (fs::path(manifest.base_dir) / manifest.attribute_bank_path).string();
    bank_ = load_bank(bank_path);
    if (bank_.n() != manifest.n)
        throw std::runtime_error("TrainSession: bank size " + std::to_string(bank_.n()) + " != manifest n " +
                                 std::to_string(manifest.n));

    encoder_spec_.d = cfg_.d;
    encoder_spec_.kind = EncoderKind::reference_bow;
    encoder_spec_.vocab_seed = cfg_.vocab_seed;

    build_models(cfg_.seed);

    rng_noise_ = Rng(derive_seed(cfg_.seed, 0x7a5eedULL));
    loader_ = std::make_unique<BatchLoader>(data_, cfg_.batch_size, cfg_.prefetch);
}

void TrainSession::build_models(std::uint64_t seed) {
    const int image_size = data_ ? data_->manifest.image_size : 0;
    const int n = bank_.n();

    if (cfg_.mechanism != Mechanism::none) {
        memory_ = init_memory(bank_, encoder_spec_, cfg_.memory_init, cfg_.memory_update,
                              derive_seed(seed, 0x4d454dULL));
    }

    if (cfg_.mechanism == Mechanism::sample_joint) {
        if (!corr_ && data_ && !data_->manifest.records.empty()) {
            std::vector<MultiAttributeLabel> labels;
            for (const auto& rec : data_->manifest.records) {
                MultiAttributeLabel y;
                y.bits.assign(static_cast<size_t>(n), 0);
                if (cfg_.label_source == LabelSource::retrieved) {
                    const Tensor es = encode_sentence(rec.captions.front(), encoder_spec_);
                    y = retrieve_topk(es, memory_->rows->value, std::min(cfg_.retrieval_k, n));
                } else {
                    for (int a : rec.attrs) y.bits[static_cast<size_t>(a)] = 1;
                }
                labels.push_back(std::move(y));
            }
            corr_ = build_correlation(labels, cfg_.tau, cfg_.p);
        }
        if (!corr_) throw std::logic_error("TrainSession: sample_joint needs a correlation matrix");
        gcn_ = init_gcn(cfg_.gcn_layers, cfg_.d, corr_->C_reweighted, derive_seed(seed, 0x67636eULL),
                        cfg_.gcn_leaky_slope);
    }

    GeneratorConfig gcfg;
    gcfg.z_dim = cfg_.z_dim;
    gcfg.d = cfg_.d;
    gcfg.base_channels = cfg_.g_base;
    gcfg.num_blocks = blocks_for_size(image_size);
    gcfg.placement = cfg_.placement;
    gcfg.conditioning = cfg_.conditioning;
    Rng grng(derive_seed(seed, 0x47454eULL));
    gen_.init(gcfg, grng);

    DiscriminatorConfig dcfg;
    dcfg.base_channels = cfg_.d_base;
    dcfg.d = cfg_.d;
    dcfg.n_attrs = n;
    dcfg.image_size = image_size;
    Rng drng(derive_seed(seed, 0x444953ULL));
    disc_.init(dcfg, drng);

    auto to_vars = [](const std::vector<ParamRef>& refs) {
        std::vector<ag::Var> vars;
        vars.reserve(refs.size());
        for (const auto& r : refs) vars.push_back(r.var);
        return vars;
    };
    adam_g_ = Adam(to_vars(generator_group()), cfg_.lr_g, cfg_.adam_beta1, cfg_.adam_beta2);
    adam_d_ = Adam(to_vars(discriminator_group()), cfg_.lr_d, cfg_.adam_beta1, cfg_.adam_beta2);
}

std::vector<ParamRef> TrainSession::generator_group() const {
    std::vector<ParamRef> out;
    gen_.collect("gen", out);
    if (memory_ && memory_->update_mode == MemoryUpdate::learnable) out.push_back({"memory.rows", memory_->rows});
    if (gcn_)
        for (size_t i = 0; i < gcn_->weights.size(); ++i)
            out.push_back({"gcn.w" + std::to_string(i), gcn_->weights[i]});
    return out;
}

std::vector<ParamRef> TrainSession::discriminator_group() const {
    std::vector<ParamRef> out;
    disc_.collect("disc", out);
    return out;
}

Tensor TrainSession::encode_caption(const std::string& caption) const {
    return encode_sentence(caption, encoder_spec_);
}

ag::Var TrainSession::attribute_embedding(const Tensor& labels) const {
    switch (cfg_.mechanism) {
        case Mechanism::sample_aware: return sample_aware_embedding(labels, *memory_, cfg_.pooling);
        case Mechanism::sample_joint: return sample_joint_embedding(labels, *memory_, *gcn_, cfg_.pooling);
        case Mechanism::none: break;
    }
    throw std::logic_error("attribute_embedding: no mechanism configured");
}

Tensor TrainSession::batch_labels(const std::vector<ToySample>& batch, const Tensor& e_s) const {
    const int n = bank_.n();
    const int b = static_cast<int>(batch.size());
    Tensor labels({b, n});
    for (int i = 0; i < b; ++i) {
        if (cfg_.label_source == LabelSource::retrieved && cfg_.mechanism != Mechanism::none) {
            Tensor row({cfg_.d});
            std::copy_n(e_s.data.begin() + static_cast<size_t>(i) * cfg_.d, cfg_.d, row.data.begin());
            const auto y = retrieve_topk(row, memory_->rows->value, std::min(cfg_.retrieval_k, n));
            for (int j = 0; j < n; ++j) labels.data[static_cast<size_t>(i) * n + j] = y.bits[static_cast<size_t>(j)];
        } else {
            if (static_cast<int>(batch[static_cast<size_t>(i)].label.size()) != n)
                throw std::invalid_argument("train_step: label length mismatch");
            for (int j = 0; j < n; ++j)
                labels.data[static_cast<size_t>(i) * n + j] = batch[static_cast<size_t>(i)].label[static_cast<size_t>(j)];
        }
    }
    return labels;
}

LossReport TrainSession::train_step(const std::vector<ToySample>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const int b = static_cast<int>(batch.size());
    const int size = data_->manifest.image_size;
    const bool use_attr = cfg_.mechanism != Mechanism::none;

    // real images scaled to [-1,1]
    Tensor real({b, 3, size, size});
    for (int i = 0; i < b; ++i) {
        const auto& img = batch[static_cast<size_t>(i)].image;
        if (img.shape != std::vector<int>{3, size, size})
            throw std::invalid_argument("train_step: sample image shape mismatch");
        const size_t stride = img.data.size();
        for (size_t j = 0; j < stride; ++j) real.data[static_cast<size_t>(i) * stride + j] = img.data[j] * 2.0 - 1.0;
    }

    Tensor es({b, cfg_.d});
    for (int i = 0; i < b; ++i) {
        const Tensor row = encode_caption(batch[static_cast<size_t>(i)].caption);
        std::copy(row.data.begin(), row.data.end(), es.data.begin() + static_cast<size_t>(i) * cfg_.d);
    }

    const Tensor labels = batch_labels(batch, es);
    const Tensor y_real_ext = extend_labels_real(labels);
    const Tensor y_fake_ext = extend_labels_fake(labels);

    Tensor z({b, cfg_.z_dim});
    rng_noise_.normal_fill(z.data);

    const double l1 = cfg_.alignment_enabled ? cfg_.weights.lambda1 : 0.0;
    const double l4 = cfg_.alignment_enabled ? cfg_.weights.lambda4 : 0.0;

    LossReport rep;
    rep.step = step_ + 1;

    // real-pair leaves carry gradients for the matching-aware penalty; the
    // same forward also feeds the hinge, classification and alignment terms
    ag::Var es_c = ag::make_var(es, true);
    ag::Var x_real = ag::make_var(real, true);

    // ---- D update ----
    Tensor fake_value;
    {
        ag::NoGradGuard ng;
        ag::Var e_a0;
        if (use_attr) e_a0 = attribute_embedding(labels);
        ag::Var fake = gen_.forward(ag::constant(z), &es_c, use_attr ? &e_a0 : nullptr);
        fake_value = fake->value;
    }
    ag::Var x_fake = ag::constant(fake_value);

    DiscriminatorOut out_r = disc_.forward(x_real, es_c);
    DiscriminatorOut out_f = disc_.forward(x_fake, es_c);
    HingeLosses hinge = hinge_losses(out_r.adv, out_f.adv);

    ag::Var e_a_d;
    if (use_attr) e_a_d = attribute_embedding(labels);
    AlignmentLosses align_d_phase =
        alignment_losses(out_r.emb, out_f.emb, es_c, use_attr ? &e_a_d : nullptr, cfg_.weights.eta);

    ag::Var cls_d = ag::scalar(0.0);
    if (use_attr) cls_d = classification_losses(out_r.cls, out_f.cls, y_real_ext, y_fake_ext).cls_d;

    ag::Var gp = ma_gp_from_logits(out_r.adv, x_real, es_c, cfg_.weights.ma_gp_exponent);

    ag::Var total_d = hinge.adv_d;
    if (l1 != 0.0) total_d = ag::add(total_d, ag::mul_scalar(align_d_phase.align_d, l1));
    if (use_attr) total_d = ag::add(total_d, ag::mul_scalar(cls_d, cfg_.weights.lambda2));
    total_d = ag::add(total_d, ag::mul_scalar(gp, cfg_.weights.lambda3));

    check_finite(step_, {{"adv_d", &hinge.adv_d},
                         {"align_d", &align_d_phase.align_d},
                         {"cls_d", &cls_d},
                         {"ma_gp", &gp},
                         {"total_d", &total_d}});

    adam_d_.step(ag::grad(total_d, adam_d_.params));

    // ---- G update (fakes regenerated against the updated discriminator) ----
    ag::Var e_a_g;
    if (use_attr) e_a_g = attribute_embedding(labels);
    ag::Var fake2 = gen_.forward(ag::constant(z), &es_c, use_attr ? &e_a_g : nullptr);
    DiscriminatorOut out_f2 = disc_.forward(fake2, es_c);

    Tensor real_emb_value;
    {
        ag::NoGradGuard ng;
        real_emb_value = disc_.forward(x_real, es_c).emb->value;
    }
    AlignmentLosses align_g_phase = alignment_losses(ag::constant(real_emb_value), out_f2.emb, es_c,
                                                     use_attr ? &e_a_g : nullptr, cfg_.weights.eta);

    ag::Var adv_g = ag::neg(ag::mean(out_f2.adv));
    ag::Var cls_g = ag::scalar(0.0);
    if (use_attr) cls_g = ag::sub(bce_loss(out_f2.cls, y_real_ext), bce_loss(out_f2.cls, y_fake_ext));

    ag::Var total_g = adv_g;
    if (l4 != 0.0) total_g = ag::add(total_g, ag::mul_scalar(align_g_phase.align_g, l4));
    if (use_attr) total_g = ag::add(total_g, ag::mul_scalar(cls_g, cfg_.weights.lambda5));

    check_finite(step_, {{"adv_g", &adv_g},
                         {"align_g", &align_g_phase.align_g},
                         {"cls_g", &cls_g},
                         {"total_g", &total_g}});

    adam_g_.step(ag::grad(total_g, adam_g_.params));

    ++step_;

    rep.adv_d = hinge.adv_d->value.item();
    rep.adv_g = adv_g->value.item();
    rep.attr_real = align_d_phase.attr_real->value.item();
    rep.attr_fake = align_g_phase.attr_fake->value.item();
    rep.sent_real = align_d_phase.sent_real->value.item();
    rep.sent_fake = align_g_phase.sent_fake->value.item();
    rep.img = align_g_phase.img->value.item();
    rep.align_d = align_d_phase.align_d->value.item();
    rep.align_g = align_g_phase.align_g->value.item();
    rep.cls_d = cls_d->value.item();
    rep.cls_g = cls_g->value.item();
    rep.ma_gp = gp->value.item();
    rep.total_d = total_d->value.item();
    rep.total_g = total_g->value.item();
    return rep;
}

LossReport TrainSession::step_once() {
    if (!loader_) throw std::logic_error("step_once: session has no dataset");
    std::vector<ToySample> batch;
    if (epoch_ < 0) {
        epoch_ = 0;
        batches_in_epoch_ = 0;
        loader_->start_epoch(epoch_seed(cfg_.seed, epoch_));
    }
    while (!loader_->next(batch)) {
        ++epoch_;
        batches_in_epoch_ = 0;
        loader_->start_epoch(epoch_seed(cfg_.seed, epoch_));
    }
    ++batches_in_epoch_;
    return train_step(batch);
}

void TrainSession::write_sample_grid(const std::string& path) {
    const int count = std::min<int>(16, static_cast<int>(data_->manifest.records.size()));
    std::vector<std::string> captions;
    std::vector<MultiAttributeLabel> labels;
    for (int i = 0; i < count; ++i) {
        const auto& rec = data_->manifest.records[static_cast<size_t>(i)];
        captions.push_back(rec.captions.front());
        MultiAttributeLabel y;
        y.bits.assign(static_cast<size_t>(bank_.n()), 0);
        for (int a : rec.attrs) y.bits[static_cast<size_t>(a)] = 1;
        labels.push_back(std::move(y));
    }
    Rng grid_rng(derive_seed(cfg_.seed, 0x9f1dULL));  // same noise at every grid
    const bool use_dataset_labels = cfg_.label_source == LabelSource::dataset;
    const Tensor images = generate_images(captions, use_dataset_labels ? &labels : nullptr, grid_rng);
    std::vector<Image> tiles;
    const int size = data_->manifest.image_size;
    for (int i = 0; i < count; ++i) {
        Tensor one({3, size, size});
        std::copy_n(images.data.begin() + static_cast<size_t>(i) * one.numel(), one.numel(), one.data.begin());
        tiles.push_back(tensor_to_image(one, -1.0, 1.0));
    }
    write_png(path, make_grid(tiles, 4));
}

void TrainSession::run() {
    const fs::path out(cfg_.effective_out_dir());
    fs::create_directories(out);
    {
        std::ofstream cf(out / "config.txt", std::ios::trunc);
        cf << cfg_.to_kv();
    }
    std::ofstream log(out / "train_log.jsonl", step_ == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("run: cannot open training log");

    while (step_ < cfg_.total_steps) {
        const LossReport rep = step_once();
        if (rep.step % cfg_.log_every == 0 || rep.step == cfg_.total_steps) {
            log << rep.to_json_line() << "\n";
            log.flush();
        }
        if (cfg_.checkpoint_every > 0 && rep.step % cfg_.checkpoint_every == 0 && rep.step != cfg_.total_steps)
            save_checkpoint((out / ("ckpt_step" + std::to_string(rep.step) + ".bin")).string());
        if (cfg_.grid_every > 0 && rep.step % cfg_.grid_every == 0)
            write_sample_grid((out / ("samples_step" + std::to_string(rep.step) + ".png")).string());
    }
    save_checkpoint((out / "ckpt_final.bin").string());
    if (memory_) save_memory_checkpoint(*memory_, step_, (out / "memory.bin").string());
}

Tensor TrainSession::generate_images(const std::vector<std::string>& captions,
                                     const std::vector<MultiAttributeLabel>* labels, Rng& noise_rng) const {
    if (captions.empty()) throw std::invalid_argument("generate_images: no captions");
    const int b = static_cast<int>(captions.size());
    const bool use_attr = cfg_.mechanism != Mechanism::none;

    ag::NoGradGuard ng;
    Tensor es({b, cfg_.d});
    for (int i = 0; i < b; ++i) {
        const Tensor row = encode_caption(captions[static_cast<size_t>(i)]);
        std::copy(row.data.begin(), row.data.end(), es.data.begin() + static_cast<size_t>(i) * cfg_.d);
    }

    ag::Var e_a;
    if (use_attr) {
        Tensor label_mat({b, bank_.n()});
        if (labels) {
            if (static_cast<int>(labels->size()) != b)
                throw std::invalid_argument("generate_images: caption/label count mismatch");
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < bank_.n(); ++j)
                    label_mat.data[static_cast<size_t>(i) * bank_.n() + j] =
                        (*labels)[static_cast<size_t>(i)].bits[static_cast<size_t>(j)];
        } else {
            // sentence-only inference: retrieve attributes from the live memory
            for (int i = 0; i < b; ++i) {
                Tensor row({cfg_.d});
                std::copy_n(es.data.begin() + static_cast<size_t>(i) * cfg_.d, cfg_.d, row.data.begin());
                const auto y = retrieve_topk(row, memory_->rows->value, std::min(cfg_.retrieval_k, bank_.n()));
                for (int j = 0; j < bank_.n(); ++j)
                    label_mat.data[static_cast<size_t>(i) * bank_.n() + j] = y.bits[static_cast<size_t>(j)];
            }
        }
        e_a = attribute_embedding(label_mat);
    }

    Tensor z({b, cfg_.z_dim});
    noise_rng.normal_fill(z.data);
    ag::Var es_c = ag::constant(es);
    return gen_.forward(ag::constant(z), &es_c, use_attr ? &e_a : nullptr)->value;
}

// ---- checkpointing ----

namespace {
constexpr std::uint32_t kCkptMagic = 0x4e475441;  // "ATGN"
}

void TrainSession::save_checkpoint(const std::string& path) const {
    ByteWriter w;
    w.put_u32(kCkptMagic);
    w.put_u32(1);

    nlohmann::json meta;
    meta["config"] = cfg_.to_kv();
    meta["step"] = step_;
    meta["epoch"] = epoch_;
    meta["batches_in_epoch"] = batches_in_epoch_;
    meta["bank"] = bank_.descriptions;
    meta["image_size"] = data_ ? data_->manifest.image_size : gen_.cfg.image_size();
    w.put_string(meta.dump());

    const auto rng_state = rng_noise_.save_state();
    for (auto v : rng_state) w.put_u64(v);

    // all stateful tensors by name (memory rows included even when frozen)
    std::vector<ParamRef> named = generator_group();
    if (memory_ && memory_->update_mode == MemoryUpdate::frozen) named.push_back({"memory.rows", memory_->rows});
    for (auto& p : discriminator_group()) named.push_back(p);
    w.put_u64(named.size());
    for (const auto& p : named) {
        w.put_string(p.name);
        w.put_tensor_f64(p.var->value);
    }

    w.put_u32(corr_ ? 1u : 0u);
    if (corr_) {
        w.put_f64(corr_->tau);
        w.put_f64(corr_->p);
        w.put_tensor_f64(corr_->P);
        w.put_tensor_f64(corr_->C);
        w.put_tensor_f64(corr_->C_reweighted);
    }

    adam_g_.save(w);
    adam_d_.save(w);

    atomic_write_file(path, w.bytes);
}

std::unique_ptr<TrainSession> TrainSession::load_checkpoint(const std::string& path,
                                                            std::shared_ptr<const DatasetCache> data) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (r.get_u32() != kCkptMagic) throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (r.get_u32() != 1) throw std::runtime_error("load_checkpoint: unsupported version in " + path);

    const auto meta = nlohmann::json::parse(r.get_string());

    auto session = std::unique_ptr<TrainSession>(new TrainSession());
    {
        std::istringstream cfg_stream(meta.at("config").get<std::string>());
        std::string line;
        while (std::getline(cfg_stream, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            session->cfg_.apply_kv(line.substr(0, eq), line.substr(eq + 1));
        }
    }
    session->data_ = std::move(data);
    session->step_ = meta.at("step").get<std::int64_t>();
    session->epoch_ = meta.at("epoch").get<std::int64_t>();
    session->batches_in_epoch_ = meta.at("batches_in_epoch").get<std::int64_t>();
    session->bank_ = build_bank(meta.at("bank").get<std::vector<std::string>>());

    session->encoder_spec_.d = session->cfg_.d;
    session->encoder_spec_.kind = EncoderKind::reference_bow;
    session->encoder_spec_.vocab_seed = session->cfg_.vocab_seed;

    std::array<std::uint64_t, 6> rng_state{};
    for (auto& v : rng_state) v = r.get_u64();

    const int image_size = meta.at("image_size").get<int>();
    if (session->data_ && session->data_->manifest.image_size != image_size)
        throw std::runtime_error("load_checkpoint: dataset image size does not match checkpoint");

    // corr must exist before build_models for sample_joint without data
    // so read tensors first into a map, then build
    std::unordered_map<std::string, Tensor> tensors;
    const auto count = r.get_u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.get_string();
        tensors.emplace(std::move(name), r.get_tensor_f64());
    }

    if (r.get_u32()) {
        CorrelationMatrices corr;
        corr.tau = r.get_f64();
        corr.p = r.get_f64();
        corr.P = r.get_tensor_f64();
        corr.C = r.get_tensor_f64();
        corr.C_reweighted = r.get_tensor_f64();
        session->corr_ = std::move(corr);
    }

    // rebuild with dummy init, then overwrite every named tensor
    {
        // build_models reads image_size through data_; temporarily fake it
        if (!session->data_) {
            auto fake = std::make_shared<DatasetCache>();
            fake->manifest.image_size = image_size;
            fake->manifest.n = session->bank_.n();
            session->data_ = fake;
            session->build_models(session->cfg_.seed);
            session->data_ = nullptr;
        } else {
            session->build_models(session->cfg_.seed);
        }
    }

    auto named = session->generator_group();
    if (session->memory_ && session->memory_->update_mode == MemoryUpdate::frozen)
        named.push_back({"memory.rows", session->memory_->rows});
    for (auto& p : session->discriminator_group()) named.push_back(p);
    for (auto& p : named) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) throw std::runtime_error("load_checkpoint: missing tensor " + p.name);
        check_same_shape(p.var->value, it->second, "load_checkpoint");
        p.var->value = it->second;
    }

    session->adam_g_.load(r);
    session->adam_d_.load(r);

    session->rng_noise_.load_state(rng_state);

    if (session->data_) {
        session->loader_ = std::make_unique<BatchLoader>(session->data_, session->cfg_.batch_size,
                                                         session->cfg_.prefetch);
        if (session->epoch_ >= 0) {
            session->loader_->start_epoch(epoch_seed(session->cfg_.seed, session->epoch_));
            std::vector<ToySample> skip;
            for (std::int64_t i = 0; i < session->batches_in_epoch_; ++i) session->loader_->next(skip);
        }
    }
    return session;
}

TrainResult run_training(const std::string& manifest_path, const TrainConfig& cfg) {
    auto data = std::make_shared<DatasetCache>(DatasetCache::load(manifest_path));
    TrainSession session(data, cfg);
    session.run();
    const fs::path out(cfg.effective_out_dir());
    return {(out / "ckpt_final.bin").string(), (out / "train_log.jsonl").string()};
}

}  // namespace attrgan
