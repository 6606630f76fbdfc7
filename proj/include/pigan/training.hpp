#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pigan/config.hpp"
#include "pigan/dataset.hpp"
#include "pigan/networks.hpp"
#include "pigan/optim.hpp"
#include "pigan/rng.hpp"

namespace pigan {

/// A loss became NaN or infinite; the message names the component.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Batch {
    Tensor images;                   // [B, C, crop, crop]
    std::vector<std::size_t> classes;  // identity head class per sample
    std::vector<unsigned> poses;       // 0 frontal, 1 profile
    std::size_t size() const { return classes.size(); }
};

/// Forward products of the two generator passes for one batch.
struct GeneratorPass {
    LatentCode codes;        // EA(X)
    Tensor generated;        // X^ = DA(f(X), frontal, z1)
    LatentCode cycled_codes; // EB(X^)
    Tensor cycled;           // X~ = DB(f(X^), Y^p, z2)
};

GeneratorPass generator_forward(Generator& g, const Tensor& images, std::span<const unsigned> poses,
                                const Tensor& z1, const Tensor& z2, bool training);

struct GeneratorLoss {
    Tensor total;
    Tensor adv;     // unweighted, primary plus optional secondary term
    Tensor cycle;
    Tensor fool;
    Tensor id;
    Tensor pose_b;  // zero unless pose-B supervision is enabled
};

GeneratorLoss generator_loss(Networks& nets, const Batch& batch, const GeneratorPass& pass,
                             const TrainConfig& config);

struct DiscriminatorLoss {
    Tensor total;
    Tensor realness;
    Tensor pose;
    Tensor id;
    double accuracy = 0;  // real/fake accuracy of the realness head
};

/// `generated` must not carry the generator graph.
DiscriminatorLoss discriminator_loss(Discriminator& d, const Batch& real, const Tensor& generated,
                                     const LossWeights& weights);

/// bce(LC(codes), pose). The codes are detached here, so only LC receives gradient.
Tensor latent_classifier_loss(LatentClassifier& lc, const Tensor& identity_codes, std::span<const unsigned> poses);

Tensor pose_targets(std::span<const unsigned> poses, bool flip = false);

struct TrainState {
    Networks nets;
    AdamState adam_g;
    AdamState adam_lc;
    AdamState adam_d;
    Rng rng;
    std::uint64_t step = 0;
    std::deque<double> d_accuracy;  // most recent last

    double rolling_d_accuracy() const;
};

TrainState init_train_state(const RunConfig& config);

struct StepRecord {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double loss_g_adv = 0;
    double loss_cycle = 0;
    double loss_fool = 0;
    double loss_id = 0;
    double loss_lc = 0;
    double loss_d = 0;
    double d_acc = 0;  // rolling value the hold gate compared
    bool held = false;
};

/// One LC -> G -> gated D update. Noise comes from `state.rng`.
StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& config);

/// Training identities as minibatches. Batches follow a permutation derived
/// from (seed, epoch); the last batch of an epoch wraps to the start.
class TrainingData {
public:
    TrainingData(const DatasetFile& data, std::span<const std::uint32_t> train_ids, std::size_t crop);

    std::size_t size() const { return samples_.size(); }
    std::size_t num_classes() const { return ids_.size(); }
    std::size_t steps_per_epoch(std::size_t batch_size) const;
    /// Crop offsets come from `crop_rng`.
    Batch batch(std::uint64_t seed, std::uint64_t epoch, std::size_t index, std::size_t batch_size,
                Rng& crop_rng) const;

private:
    const DatasetFile* data_;
    std::vector<std::uint32_t> ids_;
    std::vector<std::size_t> samples_;  // indices into data_->samples
    std::size_t crop_;
};

// ---------------------------------------------------------------------------
// Checkpoints (PIGC).

struct AdamSnapshot {
    std::uint64_t step_count = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

struct Checkpoint {
    static constexpr std::uint16_t kVersion = 1;

    std::string config_text;
    std::vector<NamedTensor> tensors;
    AdamSnapshot adam_g, adam_lc, adam_d;
    std::string rng_state;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;  // completed epochs
    std::vector<double> d_accuracy;
};

Checkpoint capture_checkpoint(const TrainState& state, const RunConfig& config, std::uint64_t completed_epochs);
/// Copies a checkpoint into a state built from the same config. Throws on
/// missing names or shape mismatches, naming both shapes.
void restore_checkpoint(const Checkpoint& ckpt, TrainState& state);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Config and state rebuilt from a checkpoint file.
struct LoadedModel {
    RunConfig config;
    TrainState state;
    std::uint64_t completed_epochs = 0;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

// ---------------------------------------------------------------------------
// Whole runs.

inline constexpr const char* kHistoryHeader =
    "step,epoch,loss_g_adv,loss_cycle,loss_fool,loss_id,loss_lc,loss_d,d_acc,held";
std::string format_history_row(const StepRecord& r);

struct RunOptions {
    std::filesystem::path run_dir;
    std::string config_source;                    // echoed verbatim as config.source
    std::optional<std::filesystem::path> resume;  // checkpoint to continue from
    std::optional<std::uint64_t> stop_after_step;  // stop early (tests)
    std::function<void(const StepRecord&)> on_step;
};

struct RunResult {
    TrainState state;
    std::vector<StepRecord> history;  // rows produced by this invocation
};

/// Trains per `config` into `options.run_dir`: writes config.resolved,
/// config.source, history.csv and epoch_<k>.pigc after every epoch.
RunResult run_training(const RunConfig& config, const RunOptions& options);

/// Dataset, identity split and model dims resolved for a config.
struct PreparedData {
    DatasetFile dataset;
    IdentitySplit split;
    RunConfig config;  // num_train_ids filled in
};
PreparedData prepare_data(const RunConfig& config);

}  // namespace pigan
