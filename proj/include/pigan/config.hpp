#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pigan/networks.hpp"

namespace pigan {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string path = "data/glyphs.pigd";
    double train_fraction = 0.9;
    std::uint64_t split_seed = 1;
};

struct LossWeights {
    double adv = 1.0;
    double cycle = 10.0;
    double fool = 0.5;
    double id = 1.0;
    double pose_d = 1.0;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::uint64_t seed = 1;
    double learning_rate = 0.0002;
    double lc_learning_rate = 0.0002;
    std::size_t lc_steps = 1;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double d_hold_threshold = 0.75;
    std::size_t d_hold_window = 50;
    LossWeights weights;
    bool secondary_adversarial = true;
    bool supervise_pose_b = false;
    bool fool_uniform = false;  // fooling target 0.5 instead of the flipped label
};

struct EvalConfig {
    std::uint64_t seed = 1;
    double perplexity = 15.0;
    std::size_t tsne_iterations = 500;
    double tsne_learning_rate = 100.0;
    double exaggeration = 4.0;
    std::size_t exaggeration_iterations = 100;
    std::size_t probe_steps = 200;
    double probe_learning_rate = 0.1;
    std::size_t probe_folds = 5;
    std::size_t pairs_per_row = 4;
};

/// Every knob of a run. `model.crop` doubles as the preprocessing crop side;
/// `model.num_train_ids` of 0 means "derive from the identity split".
struct RunConfig {
    DataConfig data;
    ModelConfig model = [] {
        ModelConfig m;
        m.num_train_ids = 0;
        return m;
    }();
    TrainConfig train;
    EvalConfig eval;

    /// Range checks; throws ConfigError naming the key.
    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string note;
};

/// All recognised keys in file order, with defaults and provenance notes.
std::vector<ConfigKey> config_keys();

/// Parses `key = value` lines over the defaults. `#` starts a comment.
/// Unknown or repeated keys and malformed values are errors.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace pigan
