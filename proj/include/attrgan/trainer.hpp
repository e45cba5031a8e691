#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/attribute_memory.hpp"
#include "attrgan/correlation.hpp"
#include "attrgan/losses.hpp"
#include "attrgan/nn.hpp"
#include "attrgan/text_encoder.hpp"
#include "attrgan/toy_dataset.hpp"

namespace attrgan {

enum class Mechanism { none, sample_aware, sample_joint };
enum class LabelSource { dataset, retrieved };

struct TrainConfig {
    int batch_size = 8;
    int total_steps = 2000;
    double lr_g = 0.0001;
    double lr_d = 0.0004;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.9;
    LossWeights weights;

    Mechanism mechanism = Mechanism::sample_joint;
    bool alignment_enabled = true;
    Conditioning conditioning = Conditioning::joint;
    // retrieved: per-step top-k retrieval from the live memory replaces the
    // dataset labels (sentence-only training)
    LabelSource label_source = LabelSource::dataset;
    int retrieval_k = 2;

    MemoryInit memory_init = MemoryInit::attribute_embeddings;
    MemoryUpdate memory_update = MemoryUpdate::learnable;
    Pooling pooling = Pooling::mean;
    int gcn_layers = 2;
    double gcn_leaky_slope = 0.2;
    double tau = 0.4;
    double p = 0.25;

    int d = 64;
    int z_dim = 100;
    int g_base = 32;
    int d_base = 32;
    Placement placement = Placement::ob_ot_attr_low;

    std::uint64_t seed = 1;
    std::uint64_t vocab_seed = 0;
    int log_every = 10;
    int checkpoint_every = 500;
    int grid_every = 0;
    bool prefetch = false;
    std::string out_dir = "run";

    void validate() const;
    std::string to_kv() const;
    void apply_kv(const std::string& key, const std::string& value);
    static TrainConfig from_kv_file(const std::string& path);

    // ATTRGAN_OUT overrides out_dir when set
    std::string effective_out_dir() const;
};

// Everything trained in one run plus the state needed to resume bit-exactly.
class TrainSession {
public:
    TrainSession(std::shared_ptr<const DatasetCache> data, const TrainConfig& cfg);

    LossReport train_step(const std::vector<ToySample>& batch);
    // pulls the next deterministic batch and trains on it
    LossReport step_once();
    // full run with logging, checkpoints and optional sample grids
    void run();

    void save_checkpoint(const std::string& path) const;
    static std::unique_ptr<TrainSession> load_checkpoint(const std::string& path,
                                                         std::shared_ptr<const DatasetCache> data = nullptr);

    // conditioning from captions and (optionally) labels; when labels are
    // absent in joint mode they are retrieved from the live memory
    Tensor generate_images(const std::vector<std::string>& captions,
                           const std::vector<MultiAttributeLabel>* labels, Rng& noise_rng) const;

    const TrainConfig& config() const { return cfg_; }
    std::int64_t step() const { return step_; }
    const AttributeBank& bank() const { return bank_; }
    const TextEncoderSpec& encoder_spec() const { return encoder_spec_; }
    Generator& generator() { return gen_; }
    Discriminator& discriminator() { return disc_; }
    AttributeMemory* memory() { return memory_ ? &*memory_ : nullptr; }
    const GcnStack* gcn() const { return gcn_ ? &*gcn_ : nullptr; }
    const CorrelationMatrices* correlation() const { return corr_ ? &*corr_ : nullptr; }
    std::vector<ParamRef> generator_group() const;
    std::vector<ParamRef> discriminator_group() const;
    const Adam& adam_g() const { return adam_g_; }
    const Adam& adam_d() const { return adam_d_; }

    // caption encoding with this session's encoder
    Tensor encode_caption(const std::string& caption) const;

private:
    TrainSession() = default;

    void build_models(std::uint64_t seed);
    ag::Var attribute_embedding(const Tensor& labels) const;
    Tensor batch_labels(const std::vector<ToySample>& batch, const Tensor& e_s) const;
    void write_sample_grid(const std::string& path);

    std::shared_ptr<const DatasetCache> data_;
    TrainConfig cfg_;
    AttributeBank bank_;
    TextEncoderSpec encoder_spec_;
    std::optional<AttributeMemory> memory_;
    std::optional<GcnStack> gcn_;
    std::optional<CorrelationMatrices> corr_;
    Generator gen_;
    Discriminator disc_;
    Adam adam_g_, adam_d_;
    Rng rng_noise_;
    std::unique_ptr<BatchLoader> loader_;
    std::int64_t step_ = 0;
    std::int64_t epoch_ = -1;
    std::int64_t batches_in_epoch_ = 0;
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
};

TrainResult run_training(const std::string& manifest_path, const TrainConfig& cfg);

}  // namespace attrgan
