#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace meer {

struct ModelConfig {
    int image_size = 112;
    std::array<int, 4> channels{32, 64, 128, 256};  // f1, f2, f3, X
    std::array<int, 4> blocks{1, 1, 1, 1};          // residual units per encoder stage
    int id_dim = 512;
    int mask_hidden = 256;
    int grid_size = 4;       // mask-pattern grid; 101 classes at 4
    int attention_reduction = 8;
    int num_identities = 1;  // ArcFace classes
    bool mdm = true;         // false: channel-split ablation
    int sc_count = 3;        // skip connections into the decoder: 0, 1 or 3
    bool mis = true;         // attention-weighted skips

    int num_patterns() const { return (grid_size * (grid_size + 1) / 2) * (grid_size * (grid_size + 1) / 2) + 1; }
    int feature_size() const { return image_size / 16; }

    // Reduced encoder used for desk-scale runs.
    static ModelConfig toy(int image_size = 112);
    // IResNet-50 stage widths and depths.
    static ModelConfig full(int image_size = 112);

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossWeights {
    double lambda = 0.01;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 10.0;
    double eta = 0.1;
    double arc_scale = 64.0;
    double arc_margin = 0.5;
    bool stage2_pattern_loss = false;  // keep l_sm in the stage-2 objective

    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct TrainConfig {
    int batch_size = 16;
    int epochs = 30;
    double lr = 0.01;
    double lr_floor = 1e-4;
    std::vector<int> milestones;  // epochs; empty selects 50% and 75% of `epochs`
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::uint64_t seed = 0;
    double masked_ratio = 0.5;  // share of simulated-masked faces per stage-1 batch
    int max_steps = 0;          // > 0 caps the run regardless of epochs
    bool debug_checks = false;  // assert X = X_id + X_mask on every step

    std::vector<int> effective_milestones() const;
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
    ModelConfig model = ModelConfig::toy();
    LossWeights loss;
    TrainConfig train;
    double pattern_threshold = 0.25;
    std::string manifest;  // data.manifest
    std::string pairs;     // data.pairs
    std::string out_dir = "run";

    void validate() const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Flat "section.key = value" text; '#' starts a comment. Unknown keys and malformed values throw
// std::invalid_argument. Keys not present keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical form: every key, sorted, one "key = value" per line.
std::string echo_config(const RunConfig& cfg);

}  // namespace meer
