#include "pigan/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace pigan {

namespace {

struct Binding {
    const char* name;
    const char* note;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected)
{
    throw ConfigError("config: key '" + std::string(key) + "' expects " + expected + ", got '" + std::string(value) +
                      "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view text, const char* expected)
{
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) bad_value(key, text, expected);
    return value;
}

bool parse_bool(std::string_view key, std::string_view text)
{
    if (text == "true") return true;
    if (text == "false") return false;
    bad_value(key, text, "true or false");
}

// Accessors take a mutable config, so getters read through a copy.
template <typename T>
T read(const RunConfig& c, T& (*field)(RunConfig&))
{
    RunConfig copy = c;
    return field(copy);
}

Binding size_key(const char* name, const char* note, std::size_t& (*field)(RunConfig&))
{
    return {name, note,
            [=](RunConfig& c, std::string_view v) { field(c) = parse_number<std::size_t>(name, v, "an unsigned integer"); },
            [=](const RunConfig& c) { return std::to_string(read(c, field)); }};
}

Binding u64_key(const char* name, const char* note, std::uint64_t& (*field)(RunConfig&))
{
    return {name, note,
            [=](RunConfig& c, std::string_view v) { field(c) = parse_number<std::uint64_t>(name, v, "an unsigned integer"); },
            [=](const RunConfig& c) { return std::to_string(read(c, field)); }};
}

Binding real_key(const char* name, const char* note, double& (*field)(RunConfig&))
{
    return {name, note, [=](RunConfig& c, std::string_view v) { field(c) = parse_number<double>(name, v, "a number"); },
            [=](const RunConfig& c) { return format_double(read(c, field)); }};
}

Binding float_key(const char* name, const char* note, float& (*field)(RunConfig&))
{
    return {name, note, [=](RunConfig& c, std::string_view v) { field(c) = parse_number<float>(name, v, "a number"); },
            [=](const RunConfig& c) {
                char buf[32];
                const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, read(c, field));
                return std::string(buf, ptr);
            }};
}

Binding bool_key(const char* name, const char* note, bool& (*field)(RunConfig&))
{
    return {name, note, [=](RunConfig& c, std::string_view v) { field(c) = parse_bool(name, v); },
            [=](const RunConfig& c) { return std::string(read(c, field) ? "true" : "false"); }};
}

const std::vector<Binding>& bindings()
{
    // clang-format off
    static const std::vector<Binding> table{
        {"data.path", "PIGD dataset file",
         [](RunConfig& c, std::string_view v) { c.data.path = std::string(v); },
         [](const RunConfig& c) { return c.data.path; }},
        size_key("data.crop", "crop side; 40:38 keeps the 100:96 align-to-crop ratio",
                 [](RunConfig& c) -> std::size_t& { return c.model.crop; }),
        real_key("data.train_fraction", "identity share for training; 450:50 in the reference protocol",
                 [](RunConfig& c) -> double& { return c.data.train_fraction; }),
        u64_key("data.split_seed", "seed of the identity split",
                [](RunConfig& c) -> std::uint64_t& { return c.data.split_seed; }),

        size_key("model.channels", "image channels; the stored glyphs are grayscale",
                 [](RunConfig& c) -> std::size_t& { return c.model.channels; }),
        size_key("model.identity_dim", "identity code size, 256 in the reference",
                 [](RunConfig& c) -> std::size_t& { return c.model.identity_dim; }),
        size_key("model.pose_dim", "pose code size (binary pose, unstated in the reference)",
                 [](RunConfig& c) -> std::size_t& { return c.model.pose_dim; }),
        size_key("model.noise_dim", "noise size (unstated in the reference)",
                 [](RunConfig& c) -> std::size_t& { return c.model.noise_dim; }),
        size_key("model.base_channels", "first conv width, doubled per layer (DC-GAN style)",
                 [](RunConfig& c) -> std::size_t& { return c.model.base_channels; }),
        size_key("model.lc_hidden", "latent classifier hidden units",
                 [](RunConfig& c) -> std::size_t& { return c.model.lc_hidden; }),
        size_key("model.num_train_ids", "identity head classes before the fake class; 0 derives it from the split",
                 [](RunConfig& c) -> std::size_t& { return c.model.num_train_ids; }),
        real_key("model.init_std", "weight init std, 0.02 in the reference",
                 [](RunConfig& c) -> double& { return c.model.init_std; }),
        float_key("model.bn_momentum", "running-stat retention of batch norm",
                  [](RunConfig& c) -> float& { return c.model.bn_momentum; }),

        size_key("train.batch_size", "minibatch size, 64 in the reference",
                 [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
        size_key("train.epochs", "passes over the training identities",
                 [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
        u64_key("train.seed", "seed for init, batching, crops and noise",
                [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
        real_key("train.learning_rate", "Adam step size, 0.0002 in the reference",
                 [](RunConfig& c) -> double& { return c.train.learning_rate; }),
        real_key("train.lc_learning_rate", "Adam step size of the latent classifier (invented)",
                 [](RunConfig& c) -> double& { return c.train.lc_learning_rate; }),
        size_key("train.lc_steps", "latent classifier updates per step (invented)",
                 [](RunConfig& c) -> std::size_t& { return c.train.lc_steps; }),
        real_key("train.beta1", "Adam momentum, 0.5 in the reference",
                 [](RunConfig& c) -> double& { return c.train.beta1; }),
        real_key("train.beta2", "Adam second-moment decay",
                 [](RunConfig& c) -> double& { return c.train.beta2; }),
        real_key("train.epsilon", "Adam denominator floor",
                 [](RunConfig& c) -> double& { return c.train.epsilon; }),
        real_key("train.d_hold_threshold", "hold D while its rolling accuracy is at least this",
                 [](RunConfig& c) -> double& { return c.train.d_hold_threshold; }),
        size_key("train.d_hold_window", "minibatches in the rolling D accuracy",
                 [](RunConfig& c) -> std::size_t& { return c.train.d_hold_window; }),
        real_key("train.w_adv", "adversarial weight (invented)",
                 [](RunConfig& c) -> double& { return c.train.weights.adv; }),
        real_key("train.w_cycle", "cyclic pixel loss weight (invented)",
                 [](RunConfig& c) -> double& { return c.train.weights.cycle; }),
        real_key("train.w_fool", "latent classifier fooling weight (invented)",
                 [](RunConfig& c) -> double& { return c.train.weights.fool; }),
        real_key("train.w_id", "identity classification weight (invented)",
                 [](RunConfig& c) -> double& { return c.train.weights.id; }),
        real_key("train.w_pose_d", "D pose head weight (invented)",
                 [](RunConfig& c) -> double& { return c.train.weights.pose_d; }),
        bool_key("train.secondary_adversarial", "also score the cycled image with D",
                 [](RunConfig& c) -> bool& { return c.train.secondary_adversarial; }),
        bool_key("train.supervise_pose_b", "push the pose code of generated images to frontal",
                 [](RunConfig& c) -> bool& { return c.train.supervise_pose_b; }),
        bool_key("train.fool_uniform", "fool the latent classifier toward 0.5 instead of the flipped label (invented)",
                 [](RunConfig& c) -> bool& { return c.train.fool_uniform; }),

        u64_key("eval.seed", "seed for evaluation noise, probe folds and t-SNE",
                [](RunConfig& c) -> std::uint64_t& { return c.eval.seed; }),
        real_key("eval.perplexity", "t-SNE perplexity",
                 [](RunConfig& c) -> double& { return c.eval.perplexity; }),
        size_key("eval.tsne_iterations", "t-SNE gradient steps",
                 [](RunConfig& c) -> std::size_t& { return c.eval.tsne_iterations; }),
        real_key("eval.tsne_learning_rate", "t-SNE step size",
                 [](RunConfig& c) -> double& { return c.eval.tsne_learning_rate; }),
        real_key("eval.exaggeration", "t-SNE early exaggeration factor",
                 [](RunConfig& c) -> double& { return c.eval.exaggeration; }),
        size_key("eval.exaggeration_iterations", "t-SNE iterations under exaggeration",
                 [](RunConfig& c) -> std::size_t& { return c.eval.exaggeration_iterations; }),
        size_key("eval.probe_steps", "gradient steps of the logistic pose probe",
                 [](RunConfig& c) -> std::size_t& { return c.eval.probe_steps; }),
        real_key("eval.probe_learning_rate", "pose probe step size",
                 [](RunConfig& c) -> double& { return c.eval.probe_learning_rate; }),
        size_key("eval.probe_folds", "cross-validation folds of the pose probe (upper bound)",
                 [](RunConfig& c) -> std::size_t& { return c.eval.probe_folds; }),
        size_key("eval.pairs_per_row", "input|generated pairs per mosaic row",
                 [](RunConfig& c) -> std::size_t& { return c.eval.pairs_per_row; }),
    };
    // clang-format on
    return table;
}

}  // namespace

std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void RunConfig::validate() const
{
    auto require = [](bool ok, const char* key, const char* rule) {
        if (!ok) throw ConfigError(std::string("config: ") + key + " " + rule);
    };
    require(!data.path.empty(), "data.path", "must not be empty");
    require(data.train_fraction > 0 && data.train_fraction < 1, "data.train_fraction", "must lie in (0, 1)");
    require(train.batch_size >= 2, "train.batch_size", "must be >= 2 (batch norm)");
    require(train.epochs >= 1, "train.epochs", "must be >= 1");
    require(train.learning_rate > 0, "train.learning_rate", "must be positive");
    require(train.lc_learning_rate > 0, "train.lc_learning_rate", "must be positive");
    require(train.lc_steps >= 1, "train.lc_steps", "must be at least 1");
    require(train.beta1 >= 0 && train.beta1 < 1, "train.beta1", "must lie in [0, 1)");
    require(train.beta2 >= 0 && train.beta2 < 1, "train.beta2", "must lie in [0, 1)");
    require(train.epsilon > 0, "train.epsilon", "must be positive");
    require(train.d_hold_threshold > 0.5 && train.d_hold_threshold < 1, "train.d_hold_threshold",
            "must lie in (0.5, 1)");
    require(train.d_hold_window >= 1, "train.d_hold_window", "must be >= 1");
    const auto& w = train.weights;
    require(w.adv >= 0 && w.cycle >= 0 && w.fool >= 0 && w.id >= 0 && w.pose_d >= 0, "train.w_*",
            "loss weights must be >= 0");
    require(eval.perplexity > 1, "eval.perplexity", "must be > 1");
    require(eval.tsne_iterations > eval.exaggeration_iterations, "eval.tsne_iterations",
            "must exceed eval.exaggeration_iterations");
    require(eval.tsne_learning_rate > 0, "eval.tsne_learning_rate", "must be positive");
    require(eval.exaggeration >= 1, "eval.exaggeration", "must be >= 1");
    require(eval.probe_steps >= 1, "eval.probe_steps", "must be >= 1");
    require(eval.probe_learning_rate > 0, "eval.probe_learning_rate", "must be positive");
    require(eval.probe_folds >= 2, "eval.probe_folds", "must be >= 2");
    require(eval.pairs_per_row >= 1, "eval.pairs_per_row", "must be >= 1");
    try {
        ModelConfig m = model;
        if (m.num_train_ids == 0) m.num_train_ids = 1;
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

std::vector<ConfigKey> config_keys()
{
    const RunConfig defaults;
    std::vector<ConfigKey> keys;
    for (const auto& b : bindings()) keys.push_back({b.name, b.get(defaults), b.note});
    return keys;
}

RunConfig parse_config(std::string_view text)
{
    RunConfig config;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = bindings();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) { return key == b.name; });
        if (it == table.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
        if (!seen.insert(std::string(key)).second)
            throw ConfigError(where + "key '" + std::string(key) + "' given twice");
        try {
            it->set(config, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    config.validate();
    return config;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string format_config(const RunConfig& config)
{
    std::string out;
    for (const auto& b : bindings()) out += std::string(b.name) + " = " + b.get(config) + "\n";
    return out;
}

}  // namespace pigan
