#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "attrgan/evaluation.hpp"
#include "attrgan/image_io.hpp"
#include "attrgan/losses.hpp"
#include "attrgan/serialize.hpp"
#include "attrgan/toy_dataset.hpp"
#include "attrgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace attrgan;

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Records what a command consumed and produced so identical inputs are
// checkable against identical artifact hashes.
struct RunManifest {
    std::string command;
    nlohmann::json args = nlohmann::json::object();
    nlohmann::json input_hashes = nlohmann::json::object();
    nlohmann::json artifact_hashes = nlohmann::json::object();

    void add_input(const std::string& path) { input_hashes[path] = hash_hex(hash_file(path)); }
    void add_artifact(const std::string& path) { artifact_hashes[path] = hash_hex(hash_file(path)); }

    void write(const std::string& dir) const {
        nlohmann::json j;
        j["command"] = command;
        j["args"] = args;
        j["inputs"] = input_hashes;
        j["artifacts"] = artifact_hashes;
        fs::create_directories(dir);
        std::ofstream f(fs::path(dir) / "run_manifest.json", std::ios::trunc);
        f << j.dump(2) << "\n";
    }
};

TextEncoderSpec encoder_spec_for(int d, std::uint64_t vocab_seed) {
    TextEncoderSpec spec;
    spec.d = d;
    spec.vocab_seed = vocab_seed;
    return spec;
}

int cmd_build_toy(std::uint64_t seed, int num, int size, int colors, int shapes, const std::string& out) {
    const auto result = generate_toy_dataset(seed, num, size, colors, shapes, out);
    RunManifest rm;
    rm.command = "build-toy";
    rm.args = {{"seed", seed}, {"num", num}, {"size", size}, {"colors", colors}, {"shapes", shapes}, {"out", out}};
    rm.add_artifact((fs::path(out) / "manifest.txt").string());
    rm.add_artifact((fs::path(out) / "bank.txt").string());
    rm.write(out);
    std::cout << "wrote " << result.manifest.records.size() << " samples, n=" << result.manifest.n << " attributes to "
              << out << "\n";
    return 0;
}

int cmd_build_bank(const std::string& in, const std::string& out) {
    std::ifstream f(in);
    if (!f) throw std::runtime_error("cannot open " + in);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) lines.push_back(line);
    const AttributeBank bank = build_bank(lines);
    save_bank(bank, out);
    std::cout << "bank of " << bank.n() << " attributes written to " << out << "\n";
    return 0;
}

int cmd_build_corr(const std::string& manifest_path, double tau, double p, const std::string& out) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    std::vector<MultiAttributeLabel> labels;
    for (const auto& rec : manifest.records) {
        MultiAttributeLabel y;
        y.bits.assign(static_cast<size_t>(manifest.n), 0);
        for (int a : rec.attrs) y.bits[static_cast<size_t>(a)] = 1;
        labels.push_back(std::move(y));
    }
    const CorrelationMatrices corr = build_correlation(labels, tau, p);
    save_correlation(corr, out);
    int edges = 0;
    for (double v : corr.C.data) edges += v != 0.0 ? 1 : 0;
    std::cout << "correlation over " << labels.size() << " samples, n=" << manifest.n << ", " << edges
              << " binary edges -> " << out << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, TrainConfig cfg, const std::string& resume) {
    std::cout << "effective config:\n" << cfg.to_kv();
    TrainResult result;
    if (!resume.empty()) {
        auto data = std::make_shared<DatasetCache>(DatasetCache::load(manifest_path));
        auto session = TrainSession::load_checkpoint(resume, data);
        session->run();
        const fs::path out(session->config().effective_out_dir());
        result = {(out / "ckpt_final.bin").string(), (out / "train_log.jsonl").string()};
    } else {
        result = run_training(manifest_path, cfg);
    }
    RunManifest rm;
    rm.command = "train";
    rm.args = {{"manifest", manifest_path}, {"config", cfg.to_kv()}};
    rm.add_input(manifest_path);
    rm.add_artifact(result.checkpoint_path);
    rm.add_artifact(result.log_path);
    rm.write(cfg.effective_out_dir());
    std::cout << "final checkpoint: " << result.checkpoint_path << "\n";
    std::cout << "loss log: " << result.log_path << "\n";
    return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& sentence, const std::string& attrs_csv, int count,
                 std::uint64_t seed, const std::string& out) {
    auto session = TrainSession::load_checkpoint(ckpt);
    std::vector<std::string> captions(static_cast<size_t>(count), sentence);

    std::vector<MultiAttributeLabel> labels;
    const std::vector<MultiAttributeLabel>* labels_ptr = nullptr;
    if (!attrs_csv.empty()) {
        MultiAttributeLabel y;
        y.bits.assign(static_cast<size_t>(session->bank().n()), 0);
        std::stringstream ss(attrs_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const int idx = std::stoi(tok);
            if (idx < 0 || idx >= session->bank().n())
                throw std::runtime_error("attribute index out of range: " + tok);
            y.bits[static_cast<size_t>(idx)] = 1;
        }
        labels.assign(static_cast<size_t>(count), y);
        labels_ptr = &labels;
    }

    Rng rng(seed ^ 0x95a7ULL);
    const Tensor images = session->generate_images(captions, labels_ptr, rng);
    const int size = images.dim(2);
    std::vector<Image> tiles;
    for (int i = 0; i < count; ++i) {
        Tensor one({3, size, size});
        std::copy_n(images.data.begin() + static_cast<size_t>(i) * one.numel(), one.numel(), one.data.begin());
        tiles.push_back(tensor_to_image(one, -1.0, 1.0));
    }
    write_png(out, make_grid(tiles, count <= 4 ? count : 4));
    std::cout << "wrote " << count << " samples to " << out << "\n";
    return 0;
}

int cmd_retrieve(const std::string& sentence, int k, const std::string& ckpt, const std::string& bank_path, int d,
                 std::uint64_t vocab_seed) {
    AttributeBank bank;
    Tensor memory_rows;
    TextEncoderSpec spec;
    if (!ckpt.empty()) {
        auto session = TrainSession::load_checkpoint(ckpt);
        if (!session->memory()) throw std::runtime_error("checkpoint has no attribute memory (mechanism=none)");
        bank = session->bank();
        memory_rows = session->memory()->rows->value;
        spec = session->encoder_spec();
    } else if (!bank_path.empty()) {
        bank = load_bank(bank_path);
        spec = encoder_spec_for(d, vocab_seed);
        memory_rows = encode_attributes(bank, spec);
    } else {
        throw std::runtime_error("retrieve-attrs needs --ckpt or --bank");
    }
    const Tensor es = encode_sentence(sentence, spec);
    const MultiAttributeLabel label = retrieve_topk(es, memory_rows, k);
    for (int i = 0; i < label.n(); ++i)
        if (label.bits[static_cast<size_t>(i)])
            std::cout << i << "\t" << bank.descriptions[static_cast<size_t>(i)] << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, int num_fakes, const std::string& extractor,
             int dim, std::uint64_t seed, const std::string& out) {
    auto data = std::make_shared<DatasetCache>(DatasetCache::load(manifest_path));
    auto session = TrainSession::load_checkpoint(ckpt, data);
    EvalOptions opts;
    opts.num_fakes = num_fakes;
    opts.seed = seed;
    opts.extractor.dim = dim;
    opts.extractor.seed = seed;
    if (extractor == "random_projection") opts.extractor.kind = ExtractorKind::random_projection;
    else if (extractor == "discriminator") opts.extractor.kind = ExtractorKind::discriminator_embedding;
    else throw std::runtime_error("unknown extractor: " + extractor);

    const MetricReport report = evaluate_checkpoint(*session, *data, opts);
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + out);
    f << report.to_json() << "\n";
    std::cout << report.to_json() << "\n";
    return 0;
}

// polyline chart without text; the series/colour mapping is printed instead
int plot_series(const std::map<std::string, std::vector<std::pair<double, double>>>& series, const std::string& out) {
    const int w = 900, h = 520, margin = 40;
    Image img(h, w);
    fill(img, 250, 250, 250);
    draw_rect(img, margin, margin, w - margin, h - margin, 120, 120, 120);

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& [name, pts] : series)
        for (const auto& [x, y] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;

    const std::uint8_t palette[][3] = {{200, 60, 60},  {60, 120, 200}, {60, 170, 90},  {200, 140, 40},
                                       {140, 80, 190}, {70, 180, 180}, {180, 90, 150}, {110, 110, 110}};
    int color_idx = 0;
    for (const auto& [name, pts] : series) {
        const auto* c = palette[color_idx % 8];
        std::cout << "series '" << name << "' -> rgb(" << int(c[0]) << "," << int(c[1]) << "," << int(c[2]) << ")\n";
        int px = -1, py = -1;
        for (const auto& [x, y] : pts) {
            const int ix = margin + static_cast<int>((x - xmin) / (xmax - xmin) * (w - 2 * margin));
            const int iy = h - margin - static_cast<int>((y - ymin) / (ymax - ymin) * (h - 2 * margin));
            if (px >= 0) draw_line(img, px, py, ix, iy, c[0], c[1], c[2]);
            px = ix;
            py = iy;
        }
        // legend swatch
        const int ly = margin + 8 + 10 * color_idx;
        draw_line(img, w - margin - 30, ly, w - margin - 10, ly, c[0], c[1], c[2]);
        ++color_idx;
    }
    write_png(out, img);
    return 0;
}

int cmd_plot(const std::string& log_path, const std::string& fields_csv, const std::string& out,
             const std::string& metrics_path, const std::string& metrics_out) {
    std::ifstream f(log_path);
    if (!f) throw std::runtime_error("cannot open " + log_path);
    std::vector<std::string> fields;
    {
        std::stringstream ss(fields_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) fields.push_back(tok);
    }
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const double step = j.at("step").get<double>();
        for (const auto& name : fields)
            if (j.contains(name)) series[name].push_back({step, j.at(name).get<double>()});
    }
    if (series.empty()) throw std::runtime_error("no plottable series found in " + log_path);
    plot_series(series, out);
    std::cout << "loss curves -> " << out << "\n";

    if (!metrics_path.empty()) {
        std::ifstream mf(metrics_path);
        if (!mf) throw std::runtime_error("cannot open " + metrics_path);
        std::map<std::string, std::vector<std::pair<double, double>>> mseries;
        while (std::getline(mf, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            const double step = j.value("step", 0.0);
            for (auto it = j.begin(); it != j.end(); ++it)
                if (it.key() != "step" && it->is_number()) mseries[it.key()].push_back({step, it->get<double>()});
        }
        if (!mseries.empty()) {
            plot_series(mseries, metrics_out);
            std::cout << "metric trajectories -> " << metrics_out << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attrgan: attribute-memory conditional GAN for toy text-to-image generation"};
    app.require_subcommand(1);

    int exit_code = 0;
    std::function<int()> task;

    // build-toy
    {
        auto* sub = app.add_subcommand("build-toy", "generate the synthetic shapes dataset");
        auto seed = std::make_shared<std::uint64_t>(7);
        auto num = std::make_shared<int>(360);
        auto size = std::make_shared<int>(64);
        auto colors = std::make_shared<int>(4);
        auto shapes = std::make_shared<int>(3);
        auto out = std::make_shared<std::string>("toy");
        sub->add_option("--seed", *seed, "dataset seed");
        sub->add_option("--num", *num, "number of samples");
        sub->add_option("--size", *size, "image size (32 or 64)");
        sub->add_option("--colors", *colors, "palette size");
        sub->add_option("--shapes", *shapes, "shape count");
        sub->add_option("--out", *out, "output directory")->required();
        sub->callback([=, &task] { task = [=] { return cmd_build_toy(*seed, *num, *size, *colors, *shapes, *out); }; });
    }

    // build-bank
    {
        auto* sub = app.add_subcommand("build-bank", "deduplicate attribute descriptions into a bank file");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        sub->add_option("--in", *in, "input description list (one per line)")->required();
        sub->add_option("--out", *out, "output bank file")->required();
        sub->callback([=, &task] { task = [=] { return cmd_build_bank(*in, *out); }; });
    }

    // build-corr
    {
        auto* sub = app.add_subcommand("build-corr", "build correlation matrices from manifest labels");
        auto manifest = std::make_shared<std::string>();
        auto tau = std::make_shared<double>(0.4);
        auto p = std::make_shared<double>(0.25);
        auto out = std::make_shared<std::string>("corr.bin");
        sub->add_option("--manifest", *manifest, "dataset manifest")->required();
        sub->add_option("--tau", *tau, "binary threshold");
        sub->add_option("--p", *p, "re-weighting coefficient");
        sub->add_option("--out", *out, "output file");
        sub->callback([=, &task] { task = [=] { return cmd_build_corr(*manifest, *tau, *p, *out); }; });
    }

    // train
    {
        auto* sub = app.add_subcommand("train", "train the conditional GAN");
        auto manifest = std::make_shared<std::string>();
        auto config_file = std::make_shared<std::string>();
        auto resume = std::make_shared<std::string>();
        auto cfg = std::make_shared<TrainConfig>();
        auto mechanism = std::make_shared<std::string>();
        auto alignment = std::make_shared<bool>(true);
        auto no_alignment = std::make_shared<bool>(false);
        auto label_source = std::make_shared<std::string>();
        auto conditioning = std::make_shared<std::string>();
        auto placement = std::make_shared<std::string>();
        auto memory_init = std::make_shared<std::string>();
        auto memory_update = std::make_shared<std::string>();
        auto pooling = std::make_shared<std::string>();

        sub->add_option("--manifest", *manifest, "dataset manifest")->required();
        sub->add_option("--config", *config_file, "key=value config file");
        sub->add_option("--resume", *resume, "checkpoint to resume from");
        auto* o_steps = sub->add_option("--steps", cfg->total_steps, "total training steps");
        auto* o_batch = sub->add_option("--batch", cfg->batch_size, "batch size");
        auto* o_seed = sub->add_option("--seed", cfg->seed, "run seed");
        auto* o_out = sub->add_option("--out", cfg->out_dir, "output directory");
        auto* o_mech = sub->add_option("--mechanism", *mechanism, "none | sample_aware | sample_joint");
        auto* o_align = sub->add_flag("--alignment", *alignment, "enable contrastive alignment");
        auto* o_noalign = sub->add_flag("--no-alignment", *no_alignment, "disable contrastive alignment");
        auto* o_ls = sub->add_option("--label-source", *label_source, "dataset | retrieved");
        auto* o_k = sub->add_option("--retrieval-k", cfg->retrieval_k, "top-k for retrieved labels");
        auto* o_cond = sub->add_option("--conditioning", *conditioning, "joint | sentence_only | attribute_only");
        auto* o_place = sub->add_option("--placement", *placement,
                                        "ob_ot_attr_low | ob_ot_sent_low | ob_tt_sent_front | ob_tt_attr_front");
        auto* o_mi = sub->add_option("--memory-init", *memory_init, "attribute_embeddings | random_noise");
        auto* o_mu = sub->add_option("--memory-update", *memory_update, "learnable | frozen");
        auto* o_pool = sub->add_option("--pooling", *pooling, "mean | sum");
        auto* o_gbase = sub->add_option("--gbase", cfg->g_base, "generator base channels");
        auto* o_dbase = sub->add_option("--dbase", cfg->d_base, "discriminator base channels");
        auto* o_grid = sub->add_option("--grid-every", cfg->grid_every, "sample grid period (0 = off)");

        sub->callback([=, &task] {
            task = [=]() -> int {
                TrainConfig effective;
                if (!config_file->empty()) effective = TrainConfig::from_kv_file(*config_file);
                // CLI flags win over the config file
                if (*o_steps) effective.total_steps = cfg->total_steps;
                if (*o_batch) effective.batch_size = cfg->batch_size;
                if (*o_seed) effective.seed = cfg->seed;
                if (*o_out) effective.out_dir = cfg->out_dir;
                if (*o_mech) effective.apply_kv("mechanism", *mechanism);
                if (*o_align) effective.alignment_enabled = true;
                if (*o_noalign) effective.alignment_enabled = false;
                if (*o_ls) effective.apply_kv("label_source", *label_source);
                if (*o_k) effective.retrieval_k = cfg->retrieval_k;
                if (*o_cond) effective.apply_kv("conditioning", *conditioning);
                if (*o_place) effective.apply_kv("placement", *placement);
                if (*o_mi) effective.apply_kv("memory_init", *memory_init);
                if (*o_mu) effective.apply_kv("memory_update", *memory_update);
                if (*o_pool) effective.apply_kv("pooling", *pooling);
                if (*o_gbase) effective.g_base = cfg->g_base;
                if (*o_dbase) effective.d_base = cfg->d_base;
                if (*o_grid) effective.grid_every = cfg->grid_every;
                return cmd_train(*manifest, effective, *resume);
            };
        });
    }

    // generate
    {
        auto* sub = app.add_subcommand("generate", "generate a sample grid from a checkpoint");
        auto ckpt = std::make_shared<std::string>();
        auto sentence = std::make_shared<std::string>();
        auto attrs = std::make_shared<std::string>();
        auto count = std::make_shared<int>(16);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>("grid.png");
        sub->add_option("--ckpt", *ckpt, "checkpoint file")->required();
        sub->add_option("--sentence", *sentence, "conditioning sentence")->required();
        sub->add_option("--attrs", *attrs, "comma-separated attribute indices (otherwise retrieved)");
        sub->add_option("--count", *count, "number of samples");
        sub->add_option("--seed", *seed, "noise seed");
        sub->add_option("--out", *out, "output PNG");
        sub->callback(
            [=, &task] { task = [=] { return cmd_generate(*ckpt, *sentence, *attrs, *count, *seed, *out); }; });
    }

    // retrieve-attrs
    {
        auto* sub = app.add_subcommand("retrieve-attrs", "top-k attribute retrieval for a sentence");
        auto sentence = std::make_shared<std::string>();
        auto k = std::make_shared<int>(10);
        auto ckpt = std::make_shared<std::string>();
        auto bank = std::make_shared<std::string>();
        auto d = std::make_shared<int>(64);
        auto vocab_seed = std::make_shared<std::uint64_t>(0);
        sub->add_option("--sentence", *sentence, "query sentence")->required();
        sub->add_option("--k", *k, "number of attributes");
        sub->add_option("--ckpt", *ckpt, "checkpoint (for the trained memory)");
        sub->add_option("--bank", *bank, "bank file (uses the initial encoder memory)");
        sub->add_option("--d", *d, "embedding dimension for --bank mode");
        sub->add_option("--vocab-seed", *vocab_seed, "encoder vocabulary seed for --bank mode");
        sub->callback([=, &task] { task = [=] { return cmd_retrieve(*sentence, *k, *ckpt, *bank, *d, *vocab_seed); }; });
    }

    // eval
    {
        auto* sub = app.add_subcommand("eval", "compute FID / Top-1 / mAP for a checkpoint");
        auto ckpt = std::make_shared<std::string>();
        auto manifest = std::make_shared<std::string>();
        auto num_fakes = std::make_shared<int>(256);
        auto extractor = std::make_shared<std::string>("random_projection");
        auto dim = std::make_shared<int>(48);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>("report.json");
        sub->add_option("--ckpt", *ckpt, "checkpoint file")->required();
        sub->add_option("--manifest", *manifest, "dataset manifest")->required();
        sub->add_option("--num-fakes", *num_fakes, "generated sample count");
        sub->add_option("--extractor", *extractor, "random_projection | discriminator");
        sub->add_option("--dim", *dim, "feature dimension");
        sub->add_option("--seed", *seed, "evaluation seed");
        sub->add_option("--out", *out, "output report path");
        sub->callback([=, &task] {
            task = [=] { return cmd_eval(*ckpt, *manifest, *num_fakes, *extractor, *dim, *seed, *out); };
        });
    }

    // plot
    {
        auto* sub = app.add_subcommand("plot", "render loss curves (and metric trajectories) to PNG");
        auto log = std::make_shared<std::string>();
        auto fields = std::make_shared<std::string>("total_d,total_g,adv_d,adv_g");
        auto out = std::make_shared<std::string>("curves.png");
        auto metrics = std::make_shared<std::string>();
        auto metrics_out = std::make_shared<std::string>("metrics.png");
        sub->add_option("--log", *log, "training log (jsonl)")->required();
        sub->add_option("--fields", *fields, "comma-separated loss fields");
        sub->add_option("--out", *out, "output PNG");
        sub->add_option("--metrics", *metrics, "metric trajectory jsonl (optional)");
        sub->add_option("--metrics-out", *metrics_out, "metric plot PNG");
        sub->callback([=, &task] { task = [=] { return cmd_plot(*log, *fields, *out, *metrics, *metrics_out); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    try {
        exit_code = task ? task() : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
