#include "attrgan/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "attrgan/attribute_bank.hpp"
#include "attrgan/rng.hpp"

namespace attrgan {

void TextEncoderSpec::validate() const {
    if (d < 8) throw std::invalid_argument("TextEncoderSpec: d must be >= 8");
    if (kind == EncoderKind::external && external_path.empty())
        throw std::invalid_argument("TextEncoderSpec: external encoder needs external_path");
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

Tensor token_vector(const std::string& token, const TextEncoderSpec& spec) {
    spec.validate();
    Rng rng(fnv1a64(token) ^ (spec.vocab_seed * 0x9e3779b97f4a7c15ULL + 0x1234abcdULL));
    Tensor v({spec.d});
    rng.normal_fill(v.data);
    return v;
}

namespace {

Tensor external_lookup(const std::string& text, const TextEncoderSpec& spec) {
    // small files; parsed per call keeps the function stateless
    std::ifstream f(spec.external_path);
    if (!f) throw std::runtime_error("encode_sentence: cannot open " + spec.external_path);
    std::string line;
    while (std::getline(f, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        if (line.substr(0, tab) != text) continue;
        std::istringstream ss(line.substr(tab + 1));
        Tensor v({spec.d});
        for (int i = 0; i < spec.d; ++i)
            if (!(ss >> v.data[static_cast<size_t>(i)]))
                throw std::runtime_error("encode_sentence: embedding for '" + text + "' has fewer than " +
                                         std::to_string(spec.d) + " values");
        return v;
    }
    throw std::runtime_error("encode_sentence: no external embedding for '" + text + "'");
}

}  // namespace

Tensor encode_sentence(const std::string& text, const TextEncoderSpec& spec) {
    spec.validate();
    if (text.empty()) throw std::invalid_argument("encode_sentence: empty text");
    if (spec.kind == EncoderKind::external) return external_lookup(text, spec);

    const auto tokens = tokenize(text);
    if (tokens.empty()) throw std::invalid_argument("encode_sentence: no tokens in text");
    Tensor acc({spec.d});
    for (const auto& tok : tokens) {
        const Tensor tv = token_vector(tok, spec);
        for (int i = 0; i < spec.d; ++i) acc.data[static_cast<size_t>(i)] += tv.data[static_cast<size_t>(i)];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (auto& v : acc.data) v *= inv;
    return acc;
}

Tensor encode_attributes(const AttributeBank& bank, const TextEncoderSpec& spec) {
    spec.validate();
    if (bank.n() == 0) throw std::invalid_argument("encode_attributes: empty bank");
    Tensor m({bank.n(), spec.d});
    for (int i = 0; i < bank.n(); ++i) {
        const Tensor row = encode_sentence(bank.descriptions[static_cast<size_t>(i)], spec);
        std::copy(row.data.begin(), row.data.end(), m.data.begin() + static_cast<size_t>(i) * spec.d);
    }
    return m;
}

}  // namespace attrgan
