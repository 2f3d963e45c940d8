#pragma once

// Stage-1 multi-task training, stage-2 joint GAN training, the learning-rate schedule and
// checkpoints.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "meer/config.hpp"
#include "meer/face_data.hpp"
#include "meer/generator_gan.hpp"
#include "meer/network.hpp"

namespace meer::train {

// ---------------------------------------------------------------------------------------------
// Learning rate

struct LrSchedule {
    double initial = 0.01;
    double floor = 1e-4;
    std::vector<long> milestone_steps;  // strictly increasing
};

LrSchedule make_schedule(const TrainConfig& cfg, long steps_per_epoch);

// Piecewise constant: initial / 10^k where k milestones are <= step, never below floor.
double lr_at(long step, const LrSchedule& schedule);

// ---------------------------------------------------------------------------------------------
// Batches

// Deterministic batch order. Each batch holds round(masked_ratio * B) records drawn from the
// simulated-masked pool and the rest from the other records; pools are reshuffled whenever
// exhausted and a single non-empty pool fills the whole batch. Batches are always full.
class BatchSampler {
public:
    BatchSampler(std::vector<std::size_t> masked, std::vector<std::size_t> unmasked, int batch_size, double masked_ratio,
                 std::uint64_t seed);

    static BatchSampler for_stage1(const data::DatasetManifest& manifest, const TrainConfig& cfg);
    static BatchSampler for_stage2(const data::DatasetManifest& manifest, const TrainConfig& cfg);

    std::vector<std::size_t> next();
    long steps_per_epoch() const noexcept { return steps_per_epoch_; }

private:
    struct Pool {
        std::vector<std::size_t> items;
        std::size_t cursor = 0;
    };
    std::size_t draw(Pool& pool);

    Pool masked_, unmasked_;
    int batch_size_;
    int masked_per_batch_;
    long steps_per_epoch_;
    std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------------------------
// Logging

struct StepLosses {
    long step = 0;
    double l_sm = 0.0;
    double l_arc = 0.0;
    double gen_adv = 0.0;   // L_D
    double disc_adv = 0.0;  // L_Dadv
    double rec = 0.0;
    double id_preserving = 0.0;
    double total = 0.0;
};

// "step,l_sm,l_arc,L_D,L_Dadv,L_rec,L_idp,total"
void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const StepLosses& l);

// ---------------------------------------------------------------------------------------------
// Checkpoints
//
// A pickled dictionary: format tag, version, stage, step, config echo, parameter/buffer tensors
// keyed by their module path, and serialised optimiser state.

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int stage = 1;
    long step = 0;
    RunConfig config;
    MeerNetwork net{nullptr};
    gan::PatchDiscriminator disc{nullptr};
    std::shared_ptr<torch::optim::AdamW> opt_g;
    std::shared_ptr<torch::optim::AdamW> opt_d;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors whose names appear in `source` into `target`. Every parameter outside the
// `optional_prefix` subtree must be present with a matching shape.
void copy_parameters(torch::nn::Module& target, const torch::nn::Module& source, const std::string& optional_prefix = "");

// ---------------------------------------------------------------------------------------------
// Training

struct TrainHooks {
    std::function<void(const StepLosses&)> on_step;
    int workers = 1;
};

// Encoder + decoupling + both heads on the stage-1 objective. Unmasked faces carry pattern 0.
// `resume` continues a stage-1 checkpoint (parameters, optimiser and step counter).
// Throws std::invalid_argument for an empty manifest and DivergenceError on a non-finite loss.
Checkpoint train_stage1(const data::DatasetManifest& manifest, const RunConfig& cfg,
                        const Checkpoint* resume = nullptr, const TrainHooks& hooks = {});

// Alternating discriminator / generator-encoder updates on masked faces paired with their
// unmasked sources, starting from a stage-1 checkpoint (or resuming a stage-2 one).
Checkpoint train_stage2(const Checkpoint& start, const data::DatasetManifest& manifest, const RunConfig& cfg,
                        const TrainHooks& hooks = {});

struct TrainAccuracy {
    double identity = 0.0;  // argmax cosine class == label
    double pattern = 0.0;   // argmax mask logits == pattern class
};

// Evaluation-mode accuracies over every record of the manifest.
TrainAccuracy training_accuracy(MeerNetwork& net, const data::DatasetManifest& manifest, int batch_size = 32,
                                int workers = 1);

// Holds every image of a manifest in memory, decoding each file once.
class ImageStore {
public:
    ImageStore(const data::DatasetManifest& manifest, int size, int workers = 1);

    torch::Tensor images(const std::vector<std::size_t>& records) const;
    torch::Tensor paired(const std::vector<std::size_t>& records) const;

private:
    torch::Tensor images_;
    torch::Tensor paired_;
    std::vector<long> paired_index_;
};

}  // namespace meer::train
