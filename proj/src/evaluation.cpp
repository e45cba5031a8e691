#include "attrgan/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "attrgan/losses.hpp"
#include "attrgan/serialize.hpp"

namespace attrgan {

namespace {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

void mean_and_cov(const Tensor& features, EVec& mu, EMat& sigma) {
    const int m = features.dim(0), d = features.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> f(features.data.data(),
                                                                                               m, d);
    mu = f.colwise().mean();
    const EMat centered = f.rowwise() - mu.transpose();
    sigma = centered.transpose() * centered / static_cast<double>(m - 1);
}

EMat psd_sqrt(const EMat& a) {
    Eigen::SelfAdjointEigenSolver<EMat> eig(0.5 * (a + a.transpose()));
    EVec vals = eig.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) vals[i] = vals[i] > 0.0 ? std::sqrt(vals[i]) : 0.0;
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const Tensor& features_a, const Tensor& features_b) {
    if (features_a.rank() != 2 || features_b.rank() != 2 || features_a.dim(1) != features_b.dim(1))
        throw std::invalid_argument("fid: expected [m,d] feature sets of equal dimension");
    const int d = features_a.dim(1);
    if (features_a.dim(0) < d + 1 || features_b.dim(0) < d + 1)
        throw std::invalid_argument("fid: need at least d+1 samples per set for a full-rank covariance");

    EVec mu_a, mu_b;
    EMat sig_a, sig_b;
    mean_and_cov(features_a, mu_a, sig_a);
    mean_and_cov(features_b, mu_b, sig_b);

    // tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}) for PSD inputs
    const EMat root_a = psd_sqrt(sig_a);
    const EMat inner = root_a * sig_b * root_a;
    Eigen::SelfAdjointEigenSolver<EMat> eig(0.5 * (inner + inner.transpose()));
    double tr_sqrt = 0.0;
    for (int i = 0; i < eig.eigenvalues().size(); ++i) {
        const double v = eig.eigenvalues()[i];
        if (v > 0.0) tr_sqrt += std::sqrt(v);
    }

    const double value = (mu_a - mu_b).squaredNorm() + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
    return value > 0.0 ? value : 0.0;
}

double top1_retrieval_accuracy(const Tensor& image_embs, const Tensor& text_embs) {
    if (image_embs.rank() != 2 || image_embs.shape != text_embs.shape)
        throw std::invalid_argument("top1_retrieval_accuracy: expected matching [m,d] matrices");
    const int m = image_embs.dim(0), d = image_embs.dim(1);
    if (m < 2) throw std::invalid_argument("top1_retrieval_accuracy: need m >= 2");

    auto row_norm = [d](const Tensor& t, int i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = t.data[static_cast<size_t>(i) * d + j];
            s += v * v;
        }
        return std::sqrt(s);
    };

    int hits = 0;
    for (int i = 0; i < m; ++i) {
        const double ni = row_norm(image_embs, i);
        if (ni == 0.0) throw std::invalid_argument("top1_retrieval_accuracy: zero-norm image embedding row");
        int best = -1;
        double best_sim = 0.0;
        for (int j = 0; j < m; ++j) {
            const double nj = row_norm(text_embs, j);
            if (nj == 0.0) throw std::invalid_argument("top1_retrieval_accuracy: zero-norm text embedding row");
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                dot += image_embs.data[static_cast<size_t>(i) * d + k] * text_embs.data[static_cast<size_t>(j) * d + k];
            const double sim = dot / (ni * nj);
            if (best < 0 || sim > best_sim) {
                best = j;
                best_sim = sim;
            }
        }
        if (best == i) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(m);
}

double multiattr_map(const Tensor& scores, const Tensor& labels) {
    if (scores.rank() != 2 || scores.shape != labels.shape)
        throw std::invalid_argument("multiattr_map: expected matching [m,n] matrices");
    const int m = scores.dim(0), n = scores.dim(1);

    double ap_sum = 0.0;
    int attrs_with_positives = 0;
    std::vector<int> order(static_cast<size_t>(m));
    for (int j = 0; j < n; ++j) {
        int positives = 0;
        for (int i = 0; i < m; ++i)
            if (labels.data[static_cast<size_t>(i) * n + j] != 0.0) ++positives;
        if (positives == 0) continue;
        ++attrs_with_positives;

        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int bidx) {
            const double sa = scores.data[static_cast<size_t>(a) * n + j];
            const double sb = scores.data[static_cast<size_t>(bidx) * n + j];
            if (sa != sb) return sa > sb;
            return a < bidx;
        });

        int hits = 0;
        double ap = 0.0;
        for (int rank = 1; rank <= m; ++rank) {
            const int idx = order[static_cast<size_t>(rank - 1)];
            if (labels.data[static_cast<size_t>(idx) * n + j] != 0.0) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank);
            }
        }
        ap_sum += ap / static_cast<double>(positives);
    }
    if (attrs_with_positives == 0) throw std::invalid_argument("multiattr_map: no attribute has a positive sample");
    return ap_sum / static_cast<double>(attrs_with_positives);
}

// ---- random projection extractor ----

RandomProjectionExtractor::RandomProjectionExtractor(int dim, std::uint64_t seed) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("RandomProjectionExtractor: dim must be >= 1");
    Rng rng(seed ^ 0xfeedf00dULL);
    c1_.init(3, 8, 3, 2, 1, rng);
    c2_.init(8, 16, 3, 2, 1, rng);
    c3_.init(16, 32, 3, 2, 1, rng);
    proj_.init(8 + 16 + 32, dim, rng);
}

Tensor RandomProjectionExtractor::features(const Tensor& images) const {
    ag::NoGradGuard ng;
    ag::Var x = ag::constant(images);
    ag::Var h1 = ag::leaky_relu(c1_.forward(x), 0.2);
    ag::Var h2 = ag::leaky_relu(c2_.forward(h1), 0.2);
    ag::Var h3 = ag::leaky_relu(c3_.forward(h2), 0.2);
    ag::Var pooled = ag::concat_cols(ag::concat_cols(ag::global_avg_pool(h1), ag::global_avg_pool(h2)),
                                     ag::global_avg_pool(h3));
    return proj_.forward(pooled)->value;
}

// ---- attribute classifier ----

AttributeClassifier::AttributeClassifier(int n, std::uint64_t seed) : n_(n) {
    if (n < 1) throw std::invalid_argument("AttributeClassifier: n must be >= 1");
    Rng rng(seed ^ 0xc1a551f1ULL);
    c1_.init(3, 12, 3, 2, 1, rng);
    c2_.init(12, 24, 3, 2, 1, rng);
    c3_.init(24, 32, 3, 2, 1, rng);
    head_.init(32, n, rng);
    std::vector<ParamRef> refs;
    c1_.collect("c1", refs);
    c2_.collect("c2", refs);
    c3_.collect("c3", refs);
    head_.collect("head", refs);
    for (auto& r : refs) params_.push_back(r.var);
}

namespace {
ag::Var classifier_logits(const Conv& c1, const Conv& c2, const Conv& c3, const Linear& head, const ag::Var& x) {
    ag::Var h = ag::leaky_relu(c1.forward(x), 0.2);
    h = ag::leaky_relu(c2.forward(h), 0.2);
    h = ag::leaky_relu(c3.forward(h), 0.2);
    return head.forward(ag::global_avg_pool(h));
}
}  // namespace

void AttributeClassifier::train(const Tensor& images, const Tensor& labels, int steps, int batch_size, double lr,
                                std::uint64_t seed) {
    const int count = images.dim(0);
    if (labels.dim(0) != count) throw std::invalid_argument("AttributeClassifier::train: image/label count mismatch");
    Adam opt(params_, lr, 0.9, 0.999);
    Rng rng(seed ^ 0x7a11ULL);
    const std::int64_t per_image = images.numel() / count;

    for (int s = 0; s < steps; ++s) {
        const int b = std::min(batch_size, count);
        Tensor xb({b, 3, images.dim(2), images.dim(3)});
        Tensor yb({b, n_});
        for (int i = 0; i < b; ++i) {
            const int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(count)));
            std::copy_n(images.data.begin() + pick * per_image, per_image, xb.data.begin() + i * per_image);
            std::copy_n(labels.data.begin() + static_cast<size_t>(pick) * n_, n_,
                        yb.data.begin() + static_cast<size_t>(i) * n_);
        }
        ag::Var logits = classifier_logits(c1_, c2_, c3_, head_, ag::constant(xb));
        ag::Var loss = bce_loss(logits, yb);
        opt.step(ag::grad(loss, params_));
    }
}

Tensor AttributeClassifier::scores(const Tensor& images) const {
    ag::NoGradGuard ng;
    ag::Var logits = classifier_logits(c1_, c2_, c3_, head_, ag::constant(images));
    return ag::sigmoid(logits)->value;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["fid"] = fid;
    j["top1_acc"] = top1_acc;
    j["map"] = map;
    return j.dump(2);
}

Tensor stack_real_images(const DatasetCache& data, int offset, int count) {
    const int size = data.manifest.image_size;
    Tensor out({count, 3, size, size});
    const std::int64_t per = static_cast<std::int64_t>(3) * size * size;
    for (int i = 0; i < count; ++i) {
        const Tensor t = image_to_tensor(data.images.at(static_cast<size_t>(offset + i)));
        for (std::int64_t j = 0; j < per; ++j) out.data[static_cast<size_t>(i * per + j)] = t.data[j] * 2.0 - 1.0;
    }
    return out;
}

Tensor stack_real_labels(const DatasetCache& data, int offset, int count) {
    const int n = data.manifest.n;
    Tensor out({count, n});
    for (int i = 0; i < count; ++i) {
        const auto& rec = data.manifest.records.at(static_cast<size_t>(offset + i));
        for (int a : rec.attrs) out.data[static_cast<size_t>(i) * n + a] = 1.0;
    }
    return out;
}

namespace {

Tensor extract_features(const FeatureExtractorSpec& spec, const Tensor& images, TrainSession* session) {
    switch (spec.kind) {
        case ExtractorKind::random_projection: {
            RandomProjectionExtractor ex(spec.dim, spec.seed);
            return ex.features(images);
        }
        case ExtractorKind::discriminator_embedding: {
            if (!session) throw std::invalid_argument("extractor: discriminator_embedding needs a checkpoint");
            ag::NoGradGuard ng;
            const int b = images.dim(0);
            Tensor es({b, session->config().d});  // embedding path ignores the sentence input
            DiscriminatorOut out = session->discriminator().forward(ag::constant(images), ag::constant(es));
            return out.emb->value;
        }
        case ExtractorKind::external: {
            const auto bytes = read_file_bytes(spec.external_path);
            ByteReader r(bytes);
            Tensor f = r.get_tensor_f32();
            if (f.rank() != 2 || f.dim(0) != images.dim(0))
                throw std::runtime_error("extractor: external feature count does not match image count");
            return f;
        }
    }
    throw std::logic_error("extract_features: unknown kind");
}

}  // namespace

MetricReport evaluate_checkpoint(TrainSession& session, const DatasetCache& data, const EvalOptions& opts) {
    const int total = static_cast<int>(data.manifest.records.size());
    if (total < 2) throw std::invalid_argument("evaluate_checkpoint: dataset too small");
    const int holdout = std::max(2, static_cast<int>(std::ceil(opts.holdout_fraction * total)));
    const int holdout_start = total - holdout;
    const int size = data.manifest.image_size;
    const int n = data.manifest.n;

    Rng rng(opts.seed ^ 0xe7a1ULL);

    // conditioning drawn from the held-out tail, cycling when num_fakes > holdout
    std::vector<std::string> captions;
    std::vector<MultiAttributeLabel> labels;
    Tensor fake_labels({opts.num_fakes, n});
    for (int i = 0; i < opts.num_fakes; ++i) {
        const auto& rec = data.manifest.records[static_cast<size_t>(holdout_start + i % holdout)];
        captions.push_back(rec.captions[static_cast<size_t>(rng.below(rec.captions.size()))]);
        MultiAttributeLabel y;
        y.bits.assign(static_cast<size_t>(n), 0);
        for (int a : rec.attrs) {
            y.bits[static_cast<size_t>(a)] = 1;
            fake_labels.data[static_cast<size_t>(i) * n + a] = 1.0;
        }
        labels.push_back(std::move(y));
    }

    // generate in batches
    Tensor fakes({opts.num_fakes, 3, size, size});
    const std::int64_t per = static_cast<std::int64_t>(3) * size * size;
    Rng noise_rng(opts.seed ^ 0x90153ULL);
    const bool pass_labels = session.config().label_source == LabelSource::dataset &&
                             session.config().mechanism != Mechanism::none;
    for (int start = 0; start < opts.num_fakes; start += opts.batch_size) {
        const int b = std::min(opts.batch_size, opts.num_fakes - start);
        std::vector<std::string> caps(captions.begin() + start, captions.begin() + start + b);
        std::vector<MultiAttributeLabel> labs(labels.begin() + start, labels.begin() + start + b);
        const Tensor out = session.generate_images(caps, pass_labels ? &labs : nullptr, noise_rng);
        std::copy_n(out.data.begin(), static_cast<size_t>(b) * per, fakes.data.begin() + static_cast<size_t>(start) * per);
    }

    MetricReport report;

    // FID: real set vs generated set
    const Tensor real_images = stack_real_images(data, 0, total);
    FeatureExtractorSpec ex = opts.extractor;
    const Tensor real_f = extract_features(ex, real_images, &session);
    const Tensor fake_f = extract_features(ex, fakes, &session);
    report.fid = fid(real_f, fake_f);

    // Top-1 retrieval with the discriminator embedding over distinct holdout records
    {
        ag::NoGradGuard ng;
        const int m = holdout;
        Tensor top_imgs({m, 3, size, size});
        std::copy_n(fakes.data.begin(), static_cast<size_t>(m) * per, top_imgs.data.begin());
        Tensor es({m, session.config().d});
        for (int i = 0; i < m; ++i) {
            const Tensor row = session.encode_caption(captions[static_cast<size_t>(i)]);
            std::copy(row.data.begin(), row.data.end(), es.data.begin() + static_cast<size_t>(i) * session.config().d);
        }
        DiscriminatorOut out = session.discriminator().forward(ag::constant(top_imgs), ag::constant(es));
        report.top1_acc = top1_retrieval_accuracy(out.emb->value, es);
    }

    // mAP: classifier trained on real data, applied to the fakes
    {
        AttributeClassifier cls(n, opts.seed);
        const Tensor real_labels = stack_real_labels(data, 0, total);
        cls.train(real_images, real_labels, opts.classifier_steps, opts.batch_size, 1e-3, opts.seed);
        const Tensor scores = cls.scores(fakes);
        report.map = multiattr_map(scores, fake_labels);
    }

    return report;
}

}  // namespace attrgan
