#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "attrgan/image_io.hpp"
#include "attrgan/tensor.hpp"

namespace attrgan {

// One training example: image in [0,1], one caption, multi-attribute label.
struct ToySample {
    Tensor image;  // [3,H,W]
    std::string caption;
    std::vector<std::uint8_t> label;  // length n, entries in {0,1}
    int sample_id = 0;
};

struct ManifestRecord {
    std::string image_path;  // relative to the manifest directory
    std::vector<std::string> captions;
    std::vector<int> attrs;  // active attribute indices
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::string attribute_bank_path;  // relative to the manifest directory
    int n = 0;
    int image_size = 0;
    std::string base_dir;  // directory the manifest was loaded from / written to
};

// What the renderer drew, kept so labels can be re-derived independently.
struct RenderObject {
    int color = 0;
    int shape = 0;
    double cx = 0, cy = 0, radius = 0;
};
struct RenderPlan {
    std::vector<RenderObject> objects;
};

const std::vector<std::string>& toy_color_names();
const std::vector<std::string>& toy_shape_names();

std::vector<std::uint8_t> derive_label(const RenderPlan& plan, int palette_size, int shape_count);
Image render_plan(const RenderPlan& plan, int image_size, int palette_size);

struct ToyDatasetResult {
    DatasetManifest manifest;
    std::vector<RenderPlan> plans;
};

// Builds the "shapes world" dataset under out_dir: images/, bank.txt and
// manifest.txt. Deterministic for a fixed seed.
ToyDatasetResult generate_toy_dataset(std::uint64_t seed, int num_samples, int image_size, int palette_size,
                                      int shape_count, const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Decoded dataset held in memory (desk scale).
struct DatasetCache {
    DatasetManifest manifest;
    std::vector<Image> images;

    static DatasetCache load(const std::string& manifest_path);
    ToySample sample(int record_idx, int caption_idx) const;
};

// Deterministic shuffled batching with optional one-batch-ahead prefetch.
// Batch order and caption draws depend only on the epoch seed.
class BatchLoader {
public:
    BatchLoader(std::shared_ptr<const DatasetCache> data, int batch_size, bool prefetch = false);
    ~BatchLoader();

    void start_epoch(std::uint64_t epoch_seed);
    bool next(std::vector<ToySample>& out);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace attrgan
