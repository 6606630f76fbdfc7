#include "pigan/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "pigan/binary_io.hpp"

namespace pigan {

namespace {

/// Clears requires_grad on a parameter group for the guard's lifetime.
class Freeze {
public:
    explicit Freeze(std::vector<NamedTensor> params) : params_(std::move(params))
    {
        for (auto& p : params_) p.tensor.set_requires_grad(false);
    }
    ~Freeze()
    {
        for (auto& p : params_) p.tensor.set_requires_grad(true);
    }
    Freeze(const Freeze&) = delete;
    Freeze& operator=(const Freeze&) = delete;

private:
    std::vector<NamedTensor> params_;
};

Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng)
{
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor({rows, cols}, std::move(v));
}

Tensor constant_targets(std::size_t n, float value)
{
    return Tensor::full({n, 1}, value);
}

void check_finite(const Tensor& t, const char* component, std::uint64_t step)
{
    const float v = t.item();
    if (!std::isfinite(v))
        throw TrainingError(std::string("non-finite ") + component + " (" + std::to_string(v) + ") at step " +
                            std::to_string(step));
}

AdamState make_adam(const TrainConfig& c, double learning_rate)
{
    AdamState s;
    s.learning_rate = learning_rate;
    s.beta1 = c.beta1;
    s.beta2 = c.beta2;
    s.epsilon = c.epsilon;
    return s;
}

std::vector<NamedTensor> lc_and_d(const Networks& nets)
{
    auto out = nets.lc.parameters();
    for (auto& p : nets.d.parameters()) out.push_back(std::move(p));
    return out;
}

AdamSnapshot snapshot(const AdamState& s)
{
    AdamSnapshot out{s.step_count, {}, {}};
    for (const auto& t : s.m) out.m.push_back(t.clone());
    for (const auto& t : s.v) out.v.push_back(t.clone());
    return out;
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name)
{
    if (dst.shape() != src.shape())
        throw FormatError("checkpoint tensor " + name + " has shape " + shape_to_string(src.shape()) +
                          " but the model expects " + shape_to_string(dst.shape()));
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

void restore_adam(const AdamSnapshot& snap, AdamState& state, const std::vector<NamedTensor>& params,
                  const char* group)
{
    if (snap.m.size() != snap.v.size() || (!snap.m.empty() && snap.m.size() != params.size()))
        throw FormatError(std::string("checkpoint: Adam moments of ") + group + " do not match the parameter count");
    for (std::size_t i = 0; i < snap.m.size(); ++i) {
        if (snap.m[i].shape() != params[i].tensor.shape() || snap.v[i].shape() != params[i].tensor.shape())
            throw FormatError("checkpoint: Adam moment of " + params[i].name + " has shape " +
                              shape_to_string(snap.m[i].shape()) + ", parameter has " +
                              shape_to_string(params[i].tensor.shape()));
    }
    state.step_count = snap.step_count;
    state.m.clear();
    state.v.clear();
    for (const auto& t : snap.m) state.m.push_back(t.clone());
    for (const auto& t : snap.v) state.v.push_back(t.clone());
}

void write_adam(BinaryWriter& w, const AdamSnapshot& a)
{
    w.u64(a.step_count);
    w.u32(static_cast<std::uint32_t>(a.m.size()));
    for (const auto& t : a.m) write_tensor(w, t);
    for (const auto& t : a.v) write_tensor(w, t);
}

AdamSnapshot read_adam(BinaryReader& r)
{
    AdamSnapshot a;
    a.step_count = r.u64();
    const auto n = r.u32();
    if (n > 4096) r.fail("implausible Adam moment count " + std::to_string(n));
    for (std::uint32_t i = 0; i < n; ++i) a.m.push_back(read_tensor(r));
    for (std::uint32_t i = 0; i < n; ++i) a.v.push_back(read_tensor(r));
    return a;
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

GeneratorPass generator_forward(Generator& g, const Tensor& images, std::span<const unsigned> poses,
                                const Tensor& z1, const Tensor& z2, bool training)
{
    GeneratorPass pass;
    const std::size_t batch = images.dim(0);
    const std::vector<unsigned> frontal(batch, 0);
    pass.codes = g.ea().encode(images, training);
    pass.generated = g.da().decode(pass.codes.identity, pose_one_hot(frontal), z1, training);
    pass.cycled_codes = g.eb().encode(pass.generated, training);
    pass.cycled = g.db().decode(pass.cycled_codes.identity, pose_one_hot(poses), z2, training);
    return pass;
}

Tensor pose_targets(std::span<const unsigned> poses, bool flip)
{
    std::vector<float> v(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) v[i] = static_cast<float>(flip ? 1u - poses[i] : poses[i]);
    return Tensor({poses.size(), 1}, std::move(v));
}

GeneratorLoss generator_loss(Networks& nets, const Batch& batch, const GeneratorPass& pass, const TrainConfig& config)
{
    if (batch.size() == 0) throw std::invalid_argument("generator_loss: empty batch");
    const auto& w = config.weights;
    const std::size_t n = batch.size();
    GeneratorLoss loss;

    const auto primary = nets.d.discriminate(pass.generated, true);
    loss.adv = bce_with_logits(primary.realness, constant_targets(n, 1.0f));
    if (config.secondary_adversarial) {
        const auto secondary = nets.d.discriminate(pass.cycled, true);
        loss.adv = add(loss.adv, bce_with_logits(secondary.realness, constant_targets(n, 1.0f)));
    }
    loss.cycle = mse_loss(pass.cycled, batch.images);
    const Tensor fool_target = config.fool_uniform ? Tensor({n, 1}, std::vector<float>(n, 0.5f))
                                                   : pose_targets(batch.poses, true);
    loss.fool = bce_with_logits(nets.lc.classify(pass.codes.identity), fool_target);
    loss.id = softmax_cross_entropy(primary.identity, batch.classes);

    loss.total = add(add(scale(loss.adv, float(w.adv)), scale(loss.cycle, float(w.cycle))),
                     add(scale(loss.fool, float(w.fool)), scale(loss.id, float(w.id))));
    if (config.supervise_pose_b) {
        const std::vector<std::size_t> frontal(n, 0);
        loss.pose_b = softmax_cross_entropy(pass.cycled_codes.pose, frontal);
        loss.total = add(loss.total, scale(loss.pose_b, float(w.pose_d)));
    } else {
        loss.pose_b = Tensor::scalar(0.0f);
    }
    return loss;
}

DiscriminatorLoss discriminator_loss(Discriminator& d, const Batch& real, const Tensor& generated,
                                     const LossWeights& weights)
{
    const std::size_t n = real.size();
    if (n == 0 || generated.dim(0) != n)
        throw std::invalid_argument("discriminator_loss: " + std::to_string(n) + " real vs " +
                                    std::to_string(generated.dim(0)) + " generated samples");
    if (generated.requires_grad())
        throw std::invalid_argument("discriminator_loss: generated batch must be detached from the generator");

    const auto on_real = d.discriminate(real.images, true);
    const auto on_fake = d.discriminate(generated, true);
    DiscriminatorLoss loss;
    loss.realness = add(bce_with_logits(on_real.realness, constant_targets(n, 1.0f)),
                        bce_with_logits(on_fake.realness, constant_targets(n, 0.0f)));
    loss.pose = softmax_cross_entropy(on_real.pose, std::vector<std::size_t>(real.poses.begin(), real.poses.end()));
    const std::vector<std::size_t> fake_class(n, d.fake_class());
    loss.id = add(softmax_cross_entropy(on_real.identity, real.classes),
                  softmax_cross_entropy(on_fake.identity, fake_class));
    loss.total = add(loss.realness, add(scale(loss.pose, float(weights.pose_d)), scale(loss.id, float(weights.id))));

    std::size_t correct = 0;
    for (float v : on_real.realness.data()) correct += v > 0;
    for (float v : on_fake.realness.data()) correct += v < 0;
    loss.accuracy = static_cast<double>(correct) / static_cast<double>(2 * n);
    return loss;
}

Tensor latent_classifier_loss(LatentClassifier& lc, const Tensor& identity_codes, std::span<const unsigned> poses)
{
    return bce_with_logits(lc.classify(identity_codes.detach()), pose_targets(poses));
}

double TrainState::rolling_d_accuracy() const
{
    if (d_accuracy.empty()) return 0.0;
    return std::accumulate(d_accuracy.begin(), d_accuracy.end(), 0.0) / static_cast<double>(d_accuracy.size());
}

TrainState init_train_state(const RunConfig& config)
{
    if (config.model.num_train_ids == 0)
        throw ConfigError("model.num_train_ids is unresolved; prepare the data split first");
    const std::uint64_t seed = config.train.seed;
    return {init_networks(config.model, splitmix64(seed)),
            make_adam(config.train, config.train.learning_rate),
            make_adam(config.train, config.train.lc_learning_rate),
            make_adam(config.train, config.train.learning_rate),
            Rng(splitmix64(seed ^ 0x5851f42d4c957f2dULL)),
            0,
            {}};
}

StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& config)
{
    if (batch.size() != config.batch_size)
        throw std::invalid_argument("train_step: batch of " + std::to_string(batch.size()) + " but batch_size is " +
                                    std::to_string(config.batch_size));
    auto& nets = state.nets;
    const std::size_t n = batch.size();
    StepRecord rec;
    rec.step = state.step;

    const Tensor z1 = gaussian(n, nets.config.noise_dim, state.rng);
    const Tensor z2 = gaussian(n, nets.config.noise_dim, state.rng);

    Tape g_tape;
    GeneratorPass pass;
    {
        TapeScope scope(g_tape);
        pass = generator_forward(nets.generator, batch.images, batch.poses, z1, z2, true);
    }

    // (1) latent classifier on detached codes; the first update's loss is reported
    for (std::size_t k = 0; k < config.lc_steps; ++k) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = latent_classifier_loss(nets.lc, pass.codes.identity, batch.poses);
        }
        check_finite(loss, "loss_lc", rec.step);
        if (k == 0) rec.loss_lc = loss.item();
        backward(loss, tape);
        const auto params = nets.lc.parameters();
        adam_step(params, state.adam_lc);
    }

    // (2) generator through EA/DA and EB/DB; LC and D stay frozen through
    // backward so the generator objective leaves no gradient on them
    {
        Freeze frozen(lc_and_d(nets));
        GeneratorLoss loss;
        {
            TapeScope scope(g_tape);
            loss = generator_loss(nets, batch, pass, config);
        }
        check_finite(loss.adv, "loss_g_adv", rec.step);
        check_finite(loss.cycle, "loss_cycle", rec.step);
        check_finite(loss.fool, "loss_fool", rec.step);
        check_finite(loss.id, "loss_id", rec.step);
        check_finite(loss.total, "generator total loss", rec.step);
        rec.loss_g_adv = loss.adv.item();
        rec.loss_cycle = loss.cycle.item();
        rec.loss_fool = loss.fool.item();
        rec.loss_id = loss.id.item();
        backward(loss.total, g_tape);
        const auto params = nets.generator.parameters();
        adam_step(params, state.adam_g);
    }

    // (3) discriminator, held while its rolling accuracy is high
    {
        Tape tape;
        DiscriminatorLoss loss;
        {
            TapeScope scope(tape);
            loss = discriminator_loss(nets.d, batch, pass.generated.detach(), config.weights);
        }
        check_finite(loss.total, "loss_d", rec.step);
        rec.loss_d = loss.total.item();
        state.d_accuracy.push_back(loss.accuracy);
        while (state.d_accuracy.size() > config.d_hold_window) state.d_accuracy.pop_front();
        rec.d_acc = state.rolling_d_accuracy();
        rec.held = rec.d_acc >= config.d_hold_threshold;
        if (!rec.held) {
            backward(loss.total, tape);
            const auto params = nets.d.parameters();
            adam_step(params, state.adam_d);
        }
    }

    ++state.step;
    return rec;
}

TrainingData::TrainingData(const DatasetFile& data, std::span<const std::uint32_t> train_ids, std::size_t crop)
    : data_(&data), ids_(train_ids.begin(), train_ids.end()), crop_(crop)
{
    std::sort(ids_.begin(), ids_.end());
    for (std::size_t i = 0; i < data.samples.size(); ++i)
        if (std::binary_search(ids_.begin(), ids_.end(), data.samples[i].identity_label)) samples_.push_back(i);
    if (samples_.empty()) throw std::invalid_argument("training data: no samples for the training identities");
}

std::size_t TrainingData::steps_per_epoch(std::size_t batch_size) const
{
    return (samples_.size() + batch_size - 1) / batch_size;
}

Batch TrainingData::batch(std::uint64_t seed, std::uint64_t epoch, std::size_t index, std::size_t batch_size,
                          Rng& crop_rng) const
{
    std::vector<std::size_t> order(samples_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng perm(splitmix64(seed ^ splitmix64(epoch + 0x632be59bd9b4e019ULL)));
    perm.shuffle(order.begin(), order.end());

    Batch b;
    std::vector<float> pixels;
    pixels.reserve(batch_size * crop_ * crop_);
    for (std::size_t k = 0; k < batch_size; ++k) {
        const auto& s = data_->samples[samples_[order[(index * batch_size + k) % order.size()]]];
        const Tensor img = preprocess(s.pixels, data_->side, crop_, &crop_rng);
        pixels.insert(pixels.end(), img.data().begin(), img.data().end());
        b.classes.push_back(static_cast<std::size_t>(
            std::lower_bound(ids_.begin(), ids_.end(), s.identity_label) - ids_.begin()));
        b.poses.push_back(pose_label(s.pose));
    }
    b.images = Tensor({batch_size, 1, crop_, crop_}, std::move(pixels));
    return b;
}

Checkpoint capture_checkpoint(const TrainState& state, const RunConfig& config, std::uint64_t completed_epochs)
{
    Checkpoint c;
    c.config_text = format_config(config);
    for (const auto& t : state.nets.state()) c.tensors.push_back({t.name, t.tensor.clone()});
    c.adam_g = snapshot(state.adam_g);
    c.adam_lc = snapshot(state.adam_lc);
    c.adam_d = snapshot(state.adam_d);
    c.rng_state = state.rng.state();
    c.step = state.step;
    c.epoch = completed_epochs;
    c.d_accuracy.assign(state.d_accuracy.begin(), state.d_accuracy.end());
    return c;
}

void restore_checkpoint(const Checkpoint& ckpt, TrainState& state)
{
    auto targets = state.nets.state();
    std::map<std::string, Tensor*> by_name;
    for (auto& t : targets) by_name[t.name] = &t.tensor;
    if (ckpt.tensors.size() != targets.size())
        throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                          std::to_string(targets.size()));
    for (const auto& t : ckpt.tensors) {
        const auto it = by_name.find(t.name);
        if (it == by_name.end()) throw FormatError("checkpoint tensor " + t.name + " is not part of the model");
        copy_into(*it->second, t.tensor, t.name);
    }
    restore_adam(ckpt.adam_g, state.adam_g, state.nets.generator.parameters(), "generator");
    restore_adam(ckpt.adam_lc, state.adam_lc, state.nets.lc.parameters(), "latent classifier");
    restore_adam(ckpt.adam_d, state.adam_d, state.nets.d.parameters(), "discriminator");
    state.rng.set_state(ckpt.rng_state);
    state.step = ckpt.step;
    state.d_accuracy.assign(ckpt.d_accuracy.begin(), ckpt.d_accuracy.end());
}

void write_checkpoint(std::ostream& out, const Checkpoint& c)
{
    BinaryWriter w(out);
    w.bytes("PIGC", 4);
    w.u16(Checkpoint::kVersion);
    w.string(c.config_text);
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        w.string(t.name);
        write_tensor(w, t.tensor);
    }
    write_adam(w, c.adam_g);
    write_adam(w, c.adam_lc);
    write_adam(w, c.adam_d);
    w.string(c.rng_state);
    w.u64(c.step);
    w.u64(c.epoch);
    w.u32(static_cast<std::uint32_t>(c.d_accuracy.size()));
    for (double a : c.d_accuracy) w.f64(a);
}

Checkpoint read_checkpoint(std::istream& in)
{
    BinaryReader r(in, "PIGC");
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "PIGC") r.fail("bad magic");
    const auto version = r.u16();
    if (version != Checkpoint::kVersion) r.fail("unsupported version " + std::to_string(version));
    Checkpoint c;
    c.config_text = r.string(1 << 20);
    const auto count = r.u32();
    if (count > 4096) r.fail("implausible tensor count " + std::to_string(count));
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.string(1024);
        t.tensor = read_tensor(r);
        c.tensors.push_back(std::move(t));
    }
    c.adam_g = read_adam(r);
    c.adam_lc = read_adam(r);
    c.adam_d = read_adam(r);
    c.rng_state = r.string(1 << 16);
    c.step = r.u64();
    c.epoch = r.u64();
    const auto window = r.u32();
    if (window > (1u << 20)) r.fail("implausible accuracy window " + std::to_string(window));
    for (std::uint32_t i = 0; i < window; ++i) c.d_accuracy.push_back(r.f64());
    if (!r.at_end()) r.fail("trailing bytes");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, ckpt);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_checkpoint(in);
}

LoadedModel load_model(const std::filesystem::path& checkpoint_path)
{
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    RunConfig config = parse_config(ckpt.config_text);
    TrainState state = init_train_state(config);
    restore_checkpoint(ckpt, state);
    return {std::move(config), std::move(state), ckpt.epoch};
}

std::string format_history_row(const StepRecord& r)
{
    char buf[512];
    // d_acc at full precision so the hold flag can be audited from the log
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.17g,%d",
                  static_cast<unsigned long long>(r.step), static_cast<unsigned long long>(r.epoch), r.loss_g_adv,
                  r.loss_cycle, r.loss_fool, r.loss_id, r.loss_lc, r.loss_d, r.d_acc, r.held ? 1 : 0);
    return buf;
}

PreparedData prepare_data(const RunConfig& config)
{
    config.validate();
    PreparedData p{load_dataset(config.data.path), {}, config};
    if (config.model.crop > p.dataset.side)
        throw ConfigError("data.crop " + std::to_string(config.model.crop) + " exceeds the dataset image side " +
                          std::to_string(p.dataset.side));
    if (config.model.channels != 1)
        throw ConfigError("model.channels is " + std::to_string(config.model.channels) +
                          " but PIGD images have 1 channel");
    p.split = split_identities(p.dataset, config.data.train_fraction, config.data.split_seed);
    if (p.config.model.num_train_ids == 0) p.config.model.num_train_ids = p.split.train.size();
    if (p.config.model.num_train_ids != p.split.train.size())
        throw ConfigError("model.num_train_ids is " + std::to_string(config.model.num_train_ids) + " but the split has " +
                          std::to_string(p.split.train.size()) + " training identities");
    return p;
}

RunResult run_training(const RunConfig& config, const RunOptions& options)
{
    PreparedData prepared = prepare_data(config);
    const RunConfig& cfg = prepared.config;
    const TrainingData data(prepared.dataset, prepared.split.train, cfg.model.crop);
    const std::size_t batch_size = cfg.train.batch_size;
    if (batch_size > data.size())
        throw ConfigError("train.batch_size " + std::to_string(batch_size) + " exceeds the " +
                          std::to_string(data.size()) + " training samples");
    const std::uint64_t per_epoch = data.steps_per_epoch(batch_size);
    const std::uint64_t total = per_epoch * cfg.train.epochs;

    RunResult result{init_train_state(cfg), {}};
    TrainState& state = result.state;
    if (options.resume) {
        const Checkpoint ckpt = load_checkpoint(*options.resume);
        if (ckpt.config_text != format_config(cfg))
            throw ConfigError("resume: checkpoint " + options.resume->string() + " was written with another config");
        restore_checkpoint(ckpt, state);
    }

    std::filesystem::create_directories(options.run_dir);
    write_text_file(options.run_dir / "config.resolved", format_config(cfg));
    if (!options.resume || !options.config_source.empty())
        write_text_file(options.run_dir / "config.source", options.config_source);

    const auto history_path = options.run_dir / "history.csv";
    std::string history = std::string(kHistoryHeader) + "\n";
    if (options.resume) {
        // keep the rows that precede the checkpoint, drop anything after it
        std::ifstream in(history_path);
        std::string line;
        std::getline(in, line);
        for (std::uint64_t i = 0; i < state.step && std::getline(in, line); ++i) history += line + "\n";
    }
    write_text_file(history_path, history);
    std::ofstream out(history_path, std::ios::app);

    while (state.step < total) {
        const std::uint64_t epoch = state.step / per_epoch;
        const Batch batch = data.batch(cfg.train.seed, epoch, state.step % per_epoch, batch_size, state.rng);
        StepRecord rec = train_step(state, batch, cfg.train);
        rec.epoch = epoch;
        out << format_history_row(rec) << '\n';
        out.flush();
        result.history.push_back(rec);
        if (options.on_step) options.on_step(rec);
        if (state.step % per_epoch == 0) {
            const std::uint64_t completed = state.step / per_epoch;
            save_checkpoint(capture_checkpoint(state, cfg, completed),
                            options.run_dir / ("epoch_" + std::to_string(completed) + ".pigc"));
        }
        if (options.stop_after_step && state.step >= *options.stop_after_step) break;
    }
    if (!out) throw std::runtime_error("cannot write " + history_path.string());
    return result;
}

}  // namespace pigan
