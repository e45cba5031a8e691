#include "attrgan/toy_dataset.hpp"

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "attrgan/rng.hpp"

namespace fs = std::filesystem;

namespace attrgan {

namespace {

struct NamedColor {
    const char* name;
    std::uint8_t r, g, b;
};

const NamedColor kColors[] = {
    {"red", 220, 50, 50},     {"green", 60, 180, 75},   {"blue", 65, 105, 225},  {"yellow", 235, 220, 60},
    {"purple", 150, 70, 200}, {"orange", 240, 150, 40}, {"cyan", 70, 210, 210},  {"magenta", 220, 80, 190},
    {"brown", 145, 95, 50},   {"gray", 160, 160, 160},
};

const char* kShapes[] = {"circle", "square", "triangle", "diamond", "cross", "ring"};

constexpr int kMaxColors = static_cast<int>(sizeof(kColors) / sizeof(kColors[0]));
constexpr int kMaxShapes = static_cast<int>(sizeof(kShapes) / sizeof(kShapes[0]));

bool inside_shape(int shape, double dx, double dy, double r) {
    switch (shape) {
        case 0:  // circle
            return dx * dx + dy * dy <= r * r;
        case 1:  // square
            return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
        case 2: {  // triangle, apex up
            if (dy < -r || dy > 0.8 * r) return false;
            const double half = 0.95 * r * (dy + r) / (1.8 * r);
            return std::abs(dx) <= half;
        }
        case 3:  // diamond
            return std::abs(dx) + std::abs(dy) <= r;
        case 4:  // cross
            return (std::abs(dx) <= 0.32 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.32 * r && std::abs(dx) <= r);
        case 5: {  // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.52 * 0.52 * r * r;
        }
        default:
            throw std::logic_error("unknown shape id");
    }
}

std::string object_phrase(const RenderObject& o) {
    return std::string("a ") + kColors[o.color].name + " " + kShapes[o.shape];
}

std::string caption_from_order(const std::vector<RenderObject>& objs, const std::vector<size_t>& order) {
    std::string s;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i > 0) s += (i + 1 == order.size()) ? " and " : ", ";
        s += object_phrase(objs[order[i]]);
    }
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

const std::vector<std::string>& toy_color_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& c : kColors) v.emplace_back(c.name);
        return v;
    }();
    return names;
}

const std::vector<std::string>& toy_shape_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& s : kShapes) v.emplace_back(s);
        return v;
    }();
    return names;
}

std::vector<std::uint8_t> derive_label(const RenderPlan& plan, int palette_size, int shape_count) {
    std::vector<std::uint8_t> label(static_cast<size_t>(palette_size + shape_count), 0);
    for (const auto& o : plan.objects) {
        label[static_cast<size_t>(o.color)] = 1;
        label[static_cast<size_t>(palette_size + o.shape)] = 1;
    }
    return label;
}

Image render_plan(const RenderPlan& plan, int image_size, int /*palette_size*/) {
    Image img(image_size, image_size);
    fill(img, 24, 24, 30);
    for (const auto& o : plan.objects) {
        const auto& col = kColors[o.color];
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                if (inside_shape(o.shape, x + 0.5 - o.cx, y + 0.5 - o.cy, o.radius)) {
                    auto* p = img.px(y, x);
                    p[0] = col.r;
                    p[1] = col.g;
                    p[2] = col.b;
                }
            }
    }
    return img;
}

ToyDatasetResult generate_toy_dataset(std::uint64_t seed, int num_samples, int image_size, int palette_size,
                                      int shape_count, const std::string& out_dir) {
    if (num_samples < 2) throw std::invalid_argument("generate_toy_dataset: num_samples must be >= 2");
    if (image_size != 32 && image_size != 64)
        throw std::invalid_argument("generate_toy_dataset: image_size must be 32 or 64");
    if (palette_size < 1 || palette_size > kMaxColors)
        throw std::invalid_argument("generate_toy_dataset: palette_size out of range (1.." + std::to_string(kMaxColors) + ")");
    if (shape_count < 1 || shape_count > kMaxShapes)
        throw std::invalid_argument("generate_toy_dataset: shape_count out of range (1.." + std::to_string(kMaxShapes) + ")");
    if (palette_size * shape_count > 64)
        throw std::invalid_argument("generate_toy_dataset: palette_size * shape_count must be <= 64");

    fs::create_directories(fs::path(out_dir) / "images");

    Rng rng(seed ^ 0xdadaf00dULL);
    const int n = palette_size + shape_count;

    ToyDatasetResult result;
    result.manifest.n = n;
    result.manifest.image_size = image_size;
    result.manifest.attribute_bank_path = "bank.txt";
    result.manifest.base_dir = out_dir;

    // bank: colors first, then shapes
    {
        std::ofstream bank(fs::path(out_dir) / "bank.txt");
        if (!bank) throw std::runtime_error("generate_toy_dataset: cannot write bank.txt");
        for (int i = 0; i < palette_size; ++i) bank << kColors[i].name << "\n";
        for (int i = 0; i < shape_count; ++i) bank << kShapes[i] << "\n";
    }

    const int num_combos = palette_size * shape_count;
    const double s = image_size;

    for (int id = 0; id < num_samples; ++id) {
        const int max_objects = std::min(3, num_combos);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_objects)));

        // distinct (color, shape) pairs
        std::vector<int> combos(static_cast<size_t>(num_combos));
        for (int i = 0; i < num_combos; ++i) combos[static_cast<size_t>(i)] = i;
        rng.shuffle(combos);

        // distinct quadrant cells keep every object visible
        std::vector<int> cells = {0, 1, 2, 3};
        rng.shuffle(cells);

        RenderPlan plan;
        for (int j = 0; j < k; ++j) {
            RenderObject o;
            o.color = combos[static_cast<size_t>(j)] % palette_size;
            o.shape = combos[static_cast<size_t>(j)] / palette_size;
            const int cell = cells[static_cast<size_t>(j)];
            const double cx0 = (cell % 2 == 0) ? s * 0.25 : s * 0.75;
            const double cy0 = (cell / 2 == 0) ? s * 0.25 : s * 0.75;
            o.cx = cx0 + (rng.uniform() - 0.5) * s * 0.12;
            o.cy = cy0 + (rng.uniform() - 0.5) * s * 0.12;
            o.radius = s * (0.13 + rng.uniform() * 0.05);
            plan.objects.push_back(o);
        }

        const Image img = render_plan(plan, image_size, palette_size);
        char name[32];
        std::snprintf(name, sizeof(name), "images/img_%05d.png", id);
        write_png((fs::path(out_dir) / name).string(), img);

        ManifestRecord rec;
        rec.image_path = name;
        const auto label = derive_label(plan, palette_size, shape_count);
        for (int i = 0; i < n; ++i)
            if (label[static_cast<size_t>(i)]) rec.attrs.push_back(i);

        // caption variants: plain order, "a picture of" prefix, one reshuffle
        std::vector<size_t> order(plan.objects.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rec.captions.push_back(caption_from_order(plan.objects, order));
        rec.captions.push_back("a picture of " + caption_from_order(plan.objects, order));
        if (plan.objects.size() > 1) {
            auto alt = order;
            rng.shuffle(alt);
            const std::string c = caption_from_order(plan.objects, alt);
            if (c != rec.captions[0]) rec.captions.push_back(c);
        }

        result.manifest.records.push_back(std::move(rec));
        result.plans.push_back(std::move(plan));
    }

    save_manifest(result.manifest, (fs::path(out_dir) / "manifest.txt").string());
    return result;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    f << "# attrgan-toy-manifest v1\n";
    f << "# bank=" << m.attribute_bank_path << "\n";
    f << "# n=" << m.n << "\n";
    f << "# size=" << m.image_size << "\n";
    for (const auto& rec : m.records) {
        f << rec.image_path << "\t";
        for (size_t i = 0; i < rec.captions.size(); ++i) {
            if (i) f << ";";
            f << rec.captions[i];
        }
        f << "\t";
        for (size_t i = 0; i < rec.attrs.size(); ++i) {
            if (i) f << ",";
            f << rec.attrs[i];
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_manifest: write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    if (m.base_dir.empty()) m.base_dir = ".";
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) {
                const std::string key = line.substr(2, eq - 2);
                const std::string val = line.substr(eq + 1);
                try {
                    if (key == "bank") m.attribute_bank_path = val;
                    else if (key == "n") m.n = std::stoi(val);
                    else if (key == "size") m.image_size = std::stoi(val);
                } catch (const std::exception&) {
                    throw std::runtime_error("load_manifest: bad header value at line " + std::to_string(lineno) +
                                             " of " + path);
                }
            }
            continue;
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 3)
            throw std::runtime_error("load_manifest: malformed record at line " + std::to_string(lineno) + " of " + path);
        ManifestRecord rec;
        rec.image_path = fields[0];
        rec.captions = split(fields[1], ';');
        if (rec.captions.empty() || rec.captions[0].empty())
            throw std::runtime_error("load_manifest: record without caption at line " + std::to_string(lineno));
        if (!fields[2].empty()) {
            for (const auto& tok : split(fields[2], ',')) {
                int idx = -1;
                size_t used = 0;
                try {
                    idx = std::stoi(tok, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != tok.size() || idx < 0 || idx >= m.n)
                    throw std::runtime_error("load_manifest: bad attribute index '" + tok + "' at line " +
                                             std::to_string(lineno));
                rec.attrs.push_back(idx);
            }
        }
        m.records.push_back(std::move(rec));
    }
    if (m.n <= 0 || m.image_size <= 0) throw std::runtime_error("load_manifest: missing header metadata in " + path);
    return m;
}

DatasetCache DatasetCache::load(const std::string& manifest_path) {
    DatasetCache cache;
    cache.manifest = load_manifest(manifest_path);
    cache.images.reserve(cache.manifest.records.size());
    for (size_t i = 0; i < cache.manifest.records.size(); ++i) {
        const auto& rec = cache.manifest.records[i];
        const std::string p = (fs::path(cache.manifest.base_dir) / rec.image_path).string();
        if (!fs::exists(p))
            throw std::runtime_error("load_dataset: missing image for record " + std::to_string(i) + ": " + p);
        cache.images.push_back(read_png(p));
    }
    return cache;
}

ToySample DatasetCache::sample(int record_idx, int caption_idx) const {
    const auto& rec = manifest.records.at(static_cast<size_t>(record_idx));
    ToySample s;
    s.sample_id = record_idx;
    s.image = image_to_tensor(images.at(static_cast<size_t>(record_idx)));
    s.caption = rec.captions.at(static_cast<size_t>(caption_idx) % rec.captions.size());
    s.label.assign(static_cast<size_t>(manifest.n), 0);
    for (int a : rec.attrs) s.label[static_cast<size_t>(a)] = 1;
    return s;
}

// ---- BatchLoader ----

struct BatchLoader::Impl {
    std::shared_ptr<const DatasetCache> data;
    int batch_size;
    bool prefetch;

    std::vector<int> order;
    std::vector<int> caption_picks;
    size_t cursor = 0;

    // prefetch machinery: one worker fills batches in order
    std::thread worker;
    std::mutex mu;
    std::condition_variable cv;
    std::vector<std::vector<ToySample>> queue;
    bool done = true;
    static constexpr size_t kQueueCap = 2;

    ~Impl() { stop_worker(); }

    void stop_worker() {
        {
            std::lock_guard<std::mutex> lock(mu);
            done = true;
        }
        cv.notify_all();
        if (worker.joinable()) worker.join();
    }

    std::vector<ToySample> build_batch(size_t start) {
        const size_t end = std::min(start + static_cast<size_t>(batch_size), order.size());
        std::vector<ToySample> batch;
        batch.reserve(end - start);
        for (size_t i = start; i < end; ++i)
            batch.push_back(data->sample(order[i], caption_picks[i]));
        return batch;
    }

    void run_worker() {
        size_t pos = 0;
        while (true) {
            if (pos >= order.size()) break;
            auto batch = build_batch(pos);
            pos += static_cast<size_t>(batch_size);
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return done || queue.size() < kQueueCap; });
            if (done) return;
            queue.push_back(std::move(batch));
            cv.notify_all();
        }
        std::lock_guard<std::mutex> lock(mu);
        done = true;
        cv.notify_all();
    }
};

BatchLoader::BatchLoader(std::shared_ptr<const DatasetCache> data, int batch_size, bool prefetch)
    : impl_(std::make_unique<Impl>()) {
    if (!data || data->manifest.records.empty()) throw std::invalid_argument("BatchLoader: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("BatchLoader: batch_size must be >= 1");
    impl_->data = std::move(data);
    impl_->batch_size = batch_size;
    impl_->prefetch = prefetch;
}

BatchLoader::~BatchLoader() = default;

void BatchLoader::start_epoch(std::uint64_t epoch_seed) {
    impl_->stop_worker();
    const int count = static_cast<int>(impl_->data->manifest.records.size());
    impl_->order.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) impl_->order[static_cast<size_t>(i)] = i;
    Rng rng(epoch_seed ^ 0x5eedbeefULL);
    rng.shuffle(impl_->order);
    impl_->caption_picks.resize(impl_->order.size());
    for (size_t i = 0; i < impl_->order.size(); ++i) {
        const auto& rec = impl_->data->manifest.records[static_cast<size_t>(impl_->order[i])];
        impl_->caption_picks[i] = static_cast<int>(rng.below(rec.captions.size()));
    }
    impl_->cursor = 0;
    impl_->queue.clear();
    if (impl_->prefetch) {
        impl_->done = false;
        impl_->worker = std::thread([p = impl_.get()] { p->run_worker(); });
    }
}

bool BatchLoader::next(std::vector<ToySample>& out) {
    if (impl_->prefetch && (impl_->worker.joinable() || !impl_->queue.empty())) {
        std::unique_lock<std::mutex> lock(impl_->mu);
        impl_->cv.wait(lock, [&] { return !impl_->queue.empty() || impl_->done; });
        if (impl_->queue.empty()) return false;
        out = std::move(impl_->queue.front());
        impl_->queue.erase(impl_->queue.begin());
        impl_->cv.notify_all();
        return true;
    }
    if (impl_->cursor >= impl_->order.size()) return false;
    out = impl_->build_batch(impl_->cursor);
    impl_->cursor += static_cast<size_t>(impl_->batch_size);
    return true;
}

}  // namespace attrgan
