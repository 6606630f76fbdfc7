#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pigan/binary_io.hpp"
#include "pigan/training.hpp"
#include "scratch_dir.hpp"

using namespace pigan;

namespace {

const double kLn2 = std::log(2.0);
constexpr std::size_t kIds = 6;

RunConfig tiny_config()
{
    RunConfig c;
    c.model.num_train_ids = kIds;
    c.train.batch_size = 4;
    c.train.seed = 3;
    return c;
}

Batch random_batch(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    Batch b;
    std::vector<float> v(n * 38 * 38);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    b.images = Tensor({n, 1, 38, 38}, std::move(v));
    for (std::size_t i = 0; i < n; ++i) {
        b.classes.push_back(i % kIds);
        b.poses.push_back(static_cast<unsigned>(i % 2));
    }
    return b;
}

Tensor noise(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> v(n * 16);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor({n, 16}, std::move(v));
}

void fill(Tensor t, float value)
{
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), value);
}

bool grads_all_zero(const std::vector<NamedTensor>& params)
{
    for (const auto& p : params)
        if (p.tensor.has_grad())
            for (float g : p.tensor.grad())
                if (g != 0.0f) return false;
    return true;
}

std::vector<std::vector<float>> snapshot_values(const std::vector<NamedTensor>& params)
{
    std::vector<std::vector<float>> out;
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

bool same_records(const StepRecord& a, const StepRecord& b)
{
    return a.step == b.step && a.loss_g_adv == b.loss_g_adv && a.loss_cycle == b.loss_cycle &&
           a.loss_fool == b.loss_fool && a.loss_id == b.loss_id && a.loss_lc == b.loss_lc && a.loss_d == b.loss_d &&
           a.d_acc == b.d_acc && a.held == b.held;
}

bool same_state(const TrainState& a, const TrainState& b)
{
    const auto sa = a.nets.state(), sb = b.nets.state();
    if (sa.size() != sb.size()) return false;
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (sa[i].name != sb[i].name ||
            !std::equal(sa[i].tensor.data().begin(), sa[i].tensor.data().end(), sb[i].tensor.data().begin()))
            return false;
    return a.rng.state() == b.rng.state() && a.step == b.step;
}

GeneratorPass forward(TrainState& s, const Batch& b, Tape& tape)
{
    TapeScope scope(tape);
    return generator_forward(s.nets.generator, b.images, b.poses, noise(b.size(), 1), noise(b.size(), 2), true);
}

std::string read_all(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("generator loss with every weight at zero is zero with zero grads")
{
    auto cfg = tiny_config();
    cfg.train.weights = {0, 0, 0, 0, 0};
    auto s = init_train_state(cfg);
    const auto b = random_batch(4, 1);
    Tape tape;
    const auto pass = forward(s, b, tape);
    GeneratorLoss loss;
    {
        TapeScope scope(tape);
        loss = generator_loss(s.nets, b, pass, cfg.train);
    }
    CHECK(loss.total.item() == 0.0f);
    backward(loss.total, tape);
    CHECK(grads_all_zero(s.nets.generator.parameters()));
}

TEST_CASE("generator loss components match closed forms")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    const auto b = random_batch(4, 2);
    Tape tape;
    auto pass = forward(s, b, tape);

    SUBCASE("fooling loss at zero LC logits is ln 2")
    {
        fill(s.nets.lc.out.weight, 0);
        fill(s.nets.lc.out.bias, 0);
        const auto loss = generator_loss(s.nets, b, pass, cfg.train);
        CHECK(loss.fool.item() == doctest::Approx(kLn2).epsilon(1e-6));
    }
    SUBCASE("cycle term vanishes when the cycle reproduces the input")
    {
        pass.cycled = b.images.clone();
        const auto loss = generator_loss(s.nets, b, pass, cfg.train);
        CHECK(loss.cycle.item() == 0.0f);
    }
    SUBCASE("total is the weighted sum of the components")
    {
        const auto loss = generator_loss(s.nets, b, pass, cfg.train);
        const auto& w = cfg.train.weights;
        const double expect = w.adv * loss.adv.item() + w.cycle * loss.cycle.item() + w.fool * loss.fool.item() +
                              w.id * loss.id.item();
        CHECK(loss.total.item() == doctest::Approx(expect).epsilon(1e-5));
        CHECK(loss.pose_b.item() == 0.0f);
    }
    SUBCASE("the secondary adversarial term can be switched off")
    {
        const auto with = generator_loss(s.nets, b, pass, cfg.train);
        cfg.train.secondary_adversarial = false;
        const auto without = generator_loss(s.nets, b, pass, cfg.train);
        CHECK(without.adv.item() < with.adv.item());
    }
    SUBCASE("empty batch is an error")
    {
        Batch empty;
        CHECK_THROWS_AS(generator_loss(s.nets, empty, pass, cfg.train), std::invalid_argument);
    }
}

TEST_CASE("discriminator loss closed forms and preconditions")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    const auto b = random_batch(4, 3);
    const auto fake = random_batch(4, 4).images;

    fill(s.nets.d.realness_head.weight, 0);
    fill(s.nets.d.realness_head.bias, 0);
    fill(s.nets.d.pose_head.weight, 0);
    fill(s.nets.d.pose_head.bias, 0);
    const auto loss = discriminator_loss(s.nets.d, b, fake, cfg.train.weights);
    CHECK(loss.realness.item() == doctest::Approx(2 * kLn2).epsilon(1e-6));
    CHECK(loss.pose.item() == doctest::Approx(kLn2).epsilon(1e-6));
    const double expect = loss.realness.item() + loss.pose.item() + loss.id.item();
    CHECK(loss.total.item() == doctest::Approx(expect).epsilon(1e-6));
    CHECK(loss.accuracy == 0.0);  // logit 0 is on neither side

    SUBCASE("realness targets are 1 for real and 0 for generated")
    {
        // a shared logit of +40 is right on reals and costs 40 on fakes, and vice versa
        fill(s.nets.d.realness_head.bias, 40);
        CHECK(discriminator_loss(s.nets.d, b, fake, cfg.train.weights).realness.item() ==
              doctest::Approx(40.0).epsilon(1e-5));
        CHECK(discriminator_loss(s.nets.d, b, fake, cfg.train.weights).accuracy == 0.5);
        fill(s.nets.d.realness_head.bias, -40);
        CHECK(discriminator_loss(s.nets.d, b, fake, cfg.train.weights).realness.item() ==
              doctest::Approx(40.0).epsilon(1e-5));
    }
    SUBCASE("mismatched batch sizes are rejected")
    {
        CHECK_THROWS_AS(discriminator_loss(s.nets.d, b, random_batch(3, 5).images, cfg.train.weights),
                        std::invalid_argument);
    }
    SUBCASE("a generated batch still attached to the generator is rejected")
    {
        Tensor attached = fake.clone();
        attached.set_requires_grad(true);
        CHECK_THROWS_AS(discriminator_loss(s.nets.d, b, attached, cfg.train.weights), std::invalid_argument);
    }
}

TEST_CASE("latent classifier loss never reaches the encoder")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    const auto b = random_batch(4, 6);
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        const auto codes = s.nets.generator.ea().encode(b.images, true);
        loss = latent_classifier_loss(s.nets.lc, codes.identity, b.poses);
    }
    backward(loss, tape);
    CHECK(grads_all_zero(s.nets.generator.parameters()));
    bool lc_has_grad = false;
    for (const auto& p : s.nets.lc.parameters())
        for (float g : p.tensor.grad()) lc_has_grad |= g != 0.0f;
    CHECK(lc_has_grad);
}

TEST_CASE("latent classifier closed form and separable codes")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    const std::size_t n = 16;
    std::vector<unsigned> poses(n);
    std::vector<float> v(n * 256, 0.0f);
    Rng rng(9);
    for (std::size_t i = 0; i < n; ++i) {
        poses[i] = static_cast<unsigned>(i % 2);
        for (std::size_t c = 0; c < 256; ++c) v[i * 256 + c] = static_cast<float>(0.1 * rng.normal());
        v[i * 256] = poses[i] ? 1.0f : -1.0f;
    }
    const Tensor codes({n, 256}, std::move(v));

    SUBCASE("zero-weight classifier gives ln 2")
    {
        for (auto& p : s.nets.lc.parameters()) fill(p.tensor, 0);
        CHECK(latent_classifier_loss(s.nets.lc, codes, poses).item() == doctest::Approx(kLn2).epsilon(1e-6));
    }
    SUBCASE("training the classifier alone drives the loss towards zero")
    {
        AdamState adam;
        adam.learning_rate = 0.01;
        double last = 0;
        for (int step = 0; step < 300; ++step) {
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                loss = latent_classifier_loss(s.nets.lc, codes, poses);
            }
            last = loss.item();
            backward(loss, tape);
            const auto params = s.nets.lc.parameters();
            adam_step(params, adam);
        }
        CHECK(last < 0.01);
    }
}

TEST_CASE("fooling and classifier objectives pull the classifier in opposite directions")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    const auto b = random_batch(2, 7);
    const auto codes = s.nets.generator.ea().encode(b.images, false).identity;
    for (std::size_t i = 0; i < 2; ++i) {
        const Tensor row = slice(codes, 0, i, 1);
        const std::vector<unsigned> pose{b.poses[i]};
        auto grad_for = [&](bool flip) {
            zero_grads(s.nets.lc.parameters());
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                loss = bce_with_logits(s.nets.lc.classify(row), pose_targets(pose, flip));
            }
            backward(loss, tape);
            std::vector<double> g;
            for (const auto& p : s.nets.lc.parameters()) g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
            return g;
        };
        const auto fit = grad_for(false);
        const auto fool = grad_for(true);
        double dot = 0;
        for (std::size_t k = 0; k < fit.size(); ++k) dot += fit[k] * fool[k];
        CHECK(dot < 0);
    }
    CHECK(pose_targets(std::vector<unsigned>{0, 1}, true).data()[0] == 1.0f);
    CHECK(pose_targets(std::vector<unsigned>{0, 1}, true).data()[1] == 0.0f);
}

TEST_CASE("discriminator hold rule")
{
    auto cfg = tiny_config();
    const auto b = random_batch(4, 8);

    SUBCASE("rolling accuracy 0.99 holds D")
    {
        auto s = init_train_state(cfg);
        s.d_accuracy.assign(50, 0.99);
        const auto before = snapshot_values(s.nets.d.parameters());
        const auto rec = train_step(s, b, cfg.train);
        CHECK(rec.held);
        CHECK(snapshot_values(s.nets.d.parameters()) == before);
    }
    SUBCASE("rolling accuracy 0.5 updates D")
    {
        auto s = init_train_state(cfg);
        s.d_accuracy.assign(50, 0.5);
        const auto before = snapshot_values(s.nets.d.parameters());
        const auto rec = train_step(s, b, cfg.train);
        CHECK_FALSE(rec.held);
        CHECK(snapshot_values(s.nets.d.parameters()) != before);
    }
    SUBCASE("D is unchanged on exactly the steps where the gate is closed")
    {
        cfg.train.d_hold_threshold = 0.55;
        cfg.train.d_hold_window = 3;
        auto s = init_train_state(cfg);
        int held = 0, updated = 0;
        for (int i = 0; i < 12; ++i) {
            const auto before = snapshot_values(s.nets.d.parameters());
            const auto rec = train_step(s, random_batch(4, 100 + i), cfg.train);
            CHECK(s.d_accuracy.size() <= 3);
            CHECK(rec.held == (rec.d_acc >= 0.55));
            CHECK(rec.held == (snapshot_values(s.nets.d.parameters()) == before));
            (rec.held ? held : updated)++;
        }
        CHECK(updated > 0);
    }
}

TEST_CASE("train_step keeps weight sharing, positive losses and a fixed update order")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    for (int i = 0; i < 3; ++i) {
        const auto rec = train_step(s, random_batch(4, 20 + i), cfg.train);
        CHECK(rec.step == static_cast<std::uint64_t>(i));
        for (double v : {rec.loss_g_adv, rec.loss_cycle, rec.loss_fool, rec.loss_id, rec.loss_lc, rec.loss_d})
            CHECK(v >= 0);
        const auto ea = s.nets.generator.ea().head.weight, eb = s.nets.generator.eb().head.weight;
        CHECK(ea.same_storage(eb));
        // nothing carries a gradient into the next step
        auto all = s.nets.generator.parameters();
        for (auto& p : s.nets.lc.parameters()) all.push_back(p);
        for (auto& p : s.nets.d.parameters()) all.push_back(p);
        for (const auto& p : all) CHECK_MESSAGE(!p.tensor.has_grad(), p.name);
    }
    CHECK(s.step == 3);
    CHECK(s.adam_g.step_count == 3);
    CHECK(s.adam_lc.step_count == 3);
    CHECK_THROWS_AS(train_step(s, random_batch(3, 1), cfg.train), std::invalid_argument);
}

TEST_CASE("latent classifier steps per train step")
{
    auto cfg = tiny_config();
    cfg.train.lc_steps = 3;
    auto s = init_train_state(cfg);
    train_step(s, random_batch(4, 30), cfg.train);
    CHECK(s.adam_lc.step_count == 3);
    CHECK(s.adam_g.step_count == 1);
}

TEST_CASE("same seed and batches replay identically")
{
    auto cfg = tiny_config();
    auto a = init_train_state(cfg);
    auto b = init_train_state(cfg);
    for (int i = 0; i < 3; ++i) {
        const auto batch = random_batch(4, 40 + i);
        CHECK(same_records(train_step(a, batch, cfg.train), train_step(b, batch, cfg.train)));
    }
    CHECK(same_state(a, b));
}

TEST_CASE("non-finite losses abort and name the component")
{
    auto cfg = tiny_config();
    const auto b = random_batch(4, 9);
    SUBCASE("poisoned encoder")
    {
        auto s = init_train_state(cfg);
        s.nets.generator.ea().head.bias.mutable_data()[0] = std::nanf("");
        try {
            train_step(s, b, cfg.train);
            FAIL("expected a TrainingError");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("loss_lc") != std::string::npos);
        }
    }
    SUBCASE("poisoned discriminator")
    {
        auto s = init_train_state(cfg);
        s.nets.d.realness_head.bias.mutable_data()[0] = std::nanf("");
        try {
            train_step(s, b, cfg.train);
            FAIL("expected a TrainingError");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("loss_g_adv") != std::string::npos);
        }
    }
}

TEST_CASE("training data batches")
{
    const auto data = build_dataset(20, 4, 2, 40, 5);
    std::vector<std::uint32_t> all(20);
    for (std::uint32_t i = 0; i < 20; ++i) all[i] = i;
    const TrainingData td(data, all, 38);
    CHECK(td.size() == 120);
    CHECK(td.steps_per_epoch(60) == 2);
    CHECK(td.steps_per_epoch(50) == 3);

    Rng r1(1), r2(1);
    const auto a = td.batch(7, 0, 0, 12, r1);
    const auto b = td.batch(7, 0, 0, 12, r2);
    CHECK(a.images.shape() == Shape{12, 1, 38, 38});
    CHECK(a.classes == b.classes);
    CHECK(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
    Rng r3(1);
    CHECK(td.batch(7, 1, 0, 12, r3).classes != a.classes);
    for (auto c : a.classes) CHECK(c < 20);

    // one epoch covers every sample; the tail batch wraps around
    Rng r4(2);
    std::vector<int> seen(20 * 6, 0);
    std::size_t frontal = 0;
    for (std::size_t i = 0; i < td.steps_per_epoch(50); ++i) {
        const auto batch = td.batch(7, 3, i, 50, r4);
        for (auto p : batch.poses) frontal += p == 0;
        CHECK(batch.size() == 50);
    }
    CHECK(frontal >= 80);
}

TEST_CASE("checkpoint round trip is bit exact")
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    for (int i = 0; i < 2; ++i) train_step(s, random_batch(4, 50 + i), cfg.train);
    const auto ckpt = capture_checkpoint(s, cfg, 1);
    std::stringstream buf;
    write_checkpoint(buf, ckpt);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "PIGC");

    std::istringstream in(bytes);
    const auto back = read_checkpoint(in);
    auto fresh = init_train_state(cfg);
    restore_checkpoint(back, fresh);
    CHECK(same_state(s, fresh));
    CHECK(fresh.adam_g.step_count == s.adam_g.step_count);
    for (std::size_t i = 0; i < s.adam_d.m.size(); ++i) {
        CHECK(std::equal(s.adam_d.m[i].data().begin(), s.adam_d.m[i].data().end(), fresh.adam_d.m[i].data().begin()));
        CHECK(std::equal(s.adam_d.v[i].data().begin(), s.adam_d.v[i].data().end(), fresh.adam_d.v[i].data().begin()));
    }
    CHECK(std::equal(s.d_accuracy.begin(), s.d_accuracy.end(), fresh.d_accuracy.begin(), fresh.d_accuracy.end()));
    CHECK(parse_config(back.config_text).train.seed == cfg.train.seed);

    // both continue identically
    const auto batch = random_batch(4, 60);
    CHECK(same_records(train_step(s, batch, cfg.train), train_step(fresh, batch, cfg.train)));

    SUBCASE("wrong magic")
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream bin(bad);
        CHECK_THROWS_AS(read_checkpoint(bin), FormatError);
    }
    SUBCASE("wrong version")
    {
        std::string bad = bytes;
        bad[4] = 9;
        std::istringstream bin(bad);
        CHECK_THROWS_AS(read_checkpoint(bin), FormatError);
    }
    SUBCASE("truncated at every tenth of the file")
    {
        for (int k = 1; k < 10; ++k) {
            std::istringstream bin(bytes.substr(0, bytes.size() * k / 10));
            CHECK_THROWS_AS(read_checkpoint(bin), FormatError);
        }
    }
    SUBCASE("trailing bytes")
    {
        std::istringstream bin(bytes + "x");
        CHECK_THROWS_AS(read_checkpoint(bin), FormatError);
    }
    SUBCASE("shape mismatch names both shapes")
    {
        auto other_cfg = cfg;
        other_cfg.model.lc_hidden = 32;
        auto other = init_train_state(other_cfg);
        try {
            restore_checkpoint(back, other);
            FAIL("expected a FormatError");
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[256, 64]") != std::string::npos);
            CHECK(msg.find("[256, 32]") != std::string::npos);
        }
    }
}

TEST_CASE("full runs: history, checkpoints and resume")
{
    ScratchDir dir("train");
    save_dataset(build_dataset(6, 2, 2, 40, 11), dir / "d.pigd");
    RunConfig cfg;
    cfg.data.path = (dir / "d.pigd").string();
    cfg.train.batch_size = 4;
    cfg.train.epochs = 4;
    cfg.train.seed = 5;
    // 6 identities at 0.9 keep 5 for training: 20 samples, 5 steps per epoch

    RunOptions whole;
    whole.run_dir = dir / "whole";
    whole.config_source = "# test\n";
    const auto a = run_training(cfg, whole);
    CHECK(a.history.size() == 20);
    const auto rows = lines_of(read_all(whole.run_dir / "history.csv"));
    REQUIRE(rows.size() == 21);
    CHECK(rows[0] == kHistoryHeader);
    CHECK(rows[1].rfind("0,0,", 0) == 0);
    for (int e = 1; e <= 4; ++e) CHECK(std::filesystem::exists(whole.run_dir / ("epoch_" + std::to_string(e) + ".pigc")));
    CHECK(read_all(whole.run_dir / "config.source") == "# test\n");
    CHECK(parse_config(read_all(whole.run_dir / "config.resolved")).model.num_train_ids == 5);

    RunOptions part;
    part.run_dir = dir / "part";
    part.stop_after_step = 10;
    const auto b1 = run_training(cfg, part);
    CHECK(b1.history.size() == 10);
    part.stop_after_step.reset();
    part.resume = part.run_dir / "epoch_2.pigc";
    const auto b2 = run_training(cfg, part);
    REQUIRE(b2.history.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(same_records(b2.history[i], a.history[10 + i]));
    CHECK(same_state(a.state, b2.state));
    CHECK(read_all(whole.run_dir / "history.csv") == read_all(part.run_dir / "history.csv"));
    CHECK(read_all(whole.run_dir / "epoch_4.pigc") == read_all(part.run_dir / "epoch_4.pigc"));

    SUBCASE("a second identical run is identical")
    {
        RunOptions again;
        again.run_dir = dir / "again";
        again.config_source = "# test\n";
        run_training(cfg, again);
        CHECK(read_all(whole.run_dir / "history.csv") == read_all(again.run_dir / "history.csv"));
        CHECK(read_all(whole.run_dir / "epoch_4.pigc") == read_all(again.run_dir / "epoch_4.pigc"));
    }
    SUBCASE("resume with another config is refused")
    {
        auto other = cfg;
        other.train.weights.cycle = 3;
        RunOptions o;
        o.run_dir = dir / "other";
        o.resume = whole.run_dir / "epoch_2.pigc";
        CHECK_THROWS_AS(run_training(other, o), ConfigError);
    }
    SUBCASE("load_model restores config and weights")
    {
        const auto m = load_model(whole.run_dir / "epoch_4.pigc");
        CHECK(m.completed_epochs == 4);
        CHECK(m.config.train.seed == 5);
        CHECK(same_state(m.state, a.state));
    }
}

TEST_CASE("run errors surface before any step")
{
    ScratchDir dir("train_err");
    save_dataset(build_dataset(6, 2, 2, 40, 11), dir / "d.pigd");
    RunConfig cfg;
    cfg.data.path = (dir / "d.pigd").string();
    RunOptions o;
    o.run_dir = dir / "run";

    cfg.train.batch_size = 64;  // 20 training samples only
    CHECK_THROWS_AS(run_training(cfg, o), ConfigError);
    cfg.train.batch_size = 4;
    cfg.model.crop = 48;
    CHECK_THROWS_AS(run_training(cfg, o), ConfigError);
    cfg.model.crop = 38;
    cfg.data.path = (dir / "missing.pigd").string();
    CHECK_THROWS(run_training(cfg, o));
    CHECK_FALSE(std::filesystem::exists(o.run_dir / "history.csv"));
}

TEST_CASE("history rows keep d_acc exact for the hold audit")
{
    StepRecord r;
    r.step = 79;
    r.epoch = 8;
    r.d_acc = 0.75 - 1e-12;
    const std::string row = format_history_row(r);
    CHECK(std::count(row.begin(), row.end(), ',') == 9);
    const auto last = row.rfind(',');
    const auto prev = row.rfind(',', last - 1);
    CHECK(std::stod(row.substr(prev + 1, last - prev - 1)) == r.d_acc);
    CHECK(row.substr(last + 1) == "0");
}
