#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrgan/autograd.hpp"
#include "attrgan/rng.hpp"
#include "attrgan/serialize.hpp"
#include "attrgan/tensor.hpp"

namespace attrgan {

struct ParamRef {
    std::string name;
    ag::Var var;
};

struct Linear {
    ag::Var w;  // [in,out]
    ag::Var b;  // [out]

    void init(int in, int out, Rng& rng, double gain = 1.0);
    ag::Var forward(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

struct Conv {
    ag::Var w;  // [cout,cin,k,k]
    ag::Var b;  // [cout]
    int stride = 1;
    int pad = 1;

    void init(int cin, int cout, int k, int stride_, int pad_, Rng& rng, double gain = 1.0);
    ag::Var forward(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

// Two-layer perceptron predicting per-channel scale and shift from a
// condition vector; applies feature*(1+gamma)+beta.
struct AffineCond {
    Linear fc1, fc2;
    int channels = 0;

    void init(int cond_dim, int hidden, int channels_, Rng& rng);
    ag::Var forward(const ag::Var& x, const ag::Var& cond) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

// x2 upsample followed by a residual fusion path with two affine units.
struct UpFusionBlock {
    Conv conv1, conv2, shortcut;
    AffineCond aff1, aff2;
    bool channel_change = false;

    void init(int cin, int cout, int cond_dim, Rng& rng);
    ag::Var forward(const ag::Var& x, const ag::Var& cond1, const ag::Var& cond2) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

enum class Placement { ob_ot_attr_low, ob_ot_sent_low, ob_tt_sent_front, ob_tt_attr_front };
enum class Conditioning { joint, sentence_only, attribute_only };

struct GeneratorConfig {
    int z_dim = 100;
    int d = 64;
    int base_channels = 32;
    int num_blocks = 4;  // 4x4 -> 64x64
    Placement placement = Placement::ob_ot_attr_low;
    Conditioning conditioning = Conditioning::joint;

    int image_size() const { return 4 << num_blocks; }
    std::vector<int> widths() const;
    void validate() const;
};

struct Generator {
    GeneratorConfig cfg;
    Linear fc;
    std::vector<UpFusionBlock> blocks;
    Conv to_rgb;

    void init(const GeneratorConfig& config, Rng& rng);
    // z [B,z_dim]; e_s/e_a may be null when the conditioning mode allows it
    ag::Var forward(const ag::Var& z, const ag::Var* e_s, const ag::Var* e_a) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

struct DownBlock {
    Conv conv1, conv2, shortcut;

    void init(int cin, int cout, Rng& rng);
    ag::Var forward(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

struct DiscriminatorConfig {
    int base_channels = 32;
    int d = 64;
    int n_attrs = 1;
    int image_size = 64;

    void validate() const;
};

struct DiscriminatorOut {
    ag::Var adv;  // [B]
    ag::Var emb;  // [B,d], sentence-independent image embedding
    ag::Var cls;  // [B,2n]
};

struct Discriminator {
    DiscriminatorConfig cfg;
    Conv stem;
    std::vector<DownBlock> blocks;
    Linear img_proj;
    Conv joint_conv;
    Conv adv_conv;
    Linear cls_head;

    void init(const DiscriminatorConfig& config, Rng& rng);
    DiscriminatorOut forward(const ag::Var& image, const ag::Var& e_s) const;
    // adversarial-logit-only path (gradient penalty)
    ag::Var adv_logit(const ag::Var& image, const ag::Var& e_s) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

struct Adam {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<ag::Var> params;
    std::vector<Tensor> m, v;

    Adam() = default;
    Adam(std::vector<ag::Var> params_, double lr_, double b1, double b2);

    void step(const std::vector<ag::Var>& grads);
    void save(ByteWriter& w) const;
    void load(ByteReader& r);
};

}  // namespace attrgan
