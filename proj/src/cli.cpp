#include "pigan/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "pigan/binary_io.hpp"
#include "pigan/evaluation.hpp"
#include "pigan/training.hpp"

namespace pigan::cli {

namespace {

/// Bad flags or config detected before any work starts.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixed(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct GenDataFlags {
    int ids = 20;
    int frontal = 4;
    int profile = 2;
    int side = 40;
    std::uint64_t seed = 7;
    std::string out = "data/glyphs.pigd";
};

struct TrainFlags {
    std::string config;
    std::string resume;
    std::string out;
    std::vector<std::string> overrides;
};

struct ModelFlags {
    std::string checkpoint;
    std::string data;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out;
};

struct EvalFlags : ModelFlags {
    std::string protocol = "both";
};

struct GenerateFlags : ModelFlags {
    std::string pose = "frontal";
    int count = 8;
};

int cmd_gen_data(const GenDataFlags& f, std::ostream& out)
{
    if (f.ids < 1 || f.frontal < 1 || f.profile < 1) throw UsageError("--ids, --frontal and --profile must be >= 1");
    if (f.side < 16) throw UsageError("--side must be >= 16");
    const auto data = build_dataset(static_cast<std::uint32_t>(f.ids), static_cast<std::uint32_t>(f.frontal),
                                    static_cast<std::uint32_t>(f.profile), static_cast<std::uint32_t>(f.side), f.seed);
    const std::filesystem::path path(f.out);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_dataset(data, path);
    out << "identities=" << data.num_identities << " samples=" << data.samples.size() << " file=" << f.out << "\n";
    return kExitOk;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

/// Applies `key=value` overrides on top of the config text, dropping any
/// line that already sets the key.
std::string with_overrides(const std::string& text, const std::vector<std::string>& overrides)
{
    if (overrides.empty()) return text;
    std::vector<std::string> keys;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
        keys.push_back(trim(std::string_view(o).substr(0, eq)));
    }
    std::string result;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        const std::string_view code = std::string_view(line).substr(0, line.find('#'));
        const auto eq = code.find('=');
        if (eq != std::string_view::npos &&
            std::find(keys.begin(), keys.end(), trim(code.substr(0, eq))) != keys.end())
            continue;
        result += line + "\n";
    }
    for (const auto& o : overrides) result += o + "\n";
    return result;
}

int cmd_train(const TrainFlags& f, std::ostream& out)
{
    if (f.config.empty() && f.resume.empty()) throw UsageError("train needs --config or --resume");
    std::string source;
    if (!f.config.empty()) {
        source = read_text(f.config);
    } else if (!f.resume.empty()) {
        source = load_checkpoint(f.resume).config_text;
    }
    source = with_overrides(source, f.overrides);
    RunConfig config;
    try {
        config = parse_config(source);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }

    RunOptions options;
    options.config_source = source;
    if (!f.resume.empty()) options.resume = f.resume;
    if (!f.out.empty()) {
        options.run_dir = f.out;
    } else if (options.resume) {
        options.run_dir = options.resume->parent_path();
    } else {
        const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
        options.run_dir = "run_" + std::to_string(now) + "_" + std::to_string(config.train.seed);
    }

    // per-epoch summary
    std::uint64_t epoch = 0, steps = 0, held = 0;
    double cycle = 0, fool = 0, d_loss = 0;
    auto flush = [&] {
        if (steps == 0) return;
        const double n = static_cast<double>(steps);
        out << "epoch " << epoch + 1 << "/" << config.train.epochs << " cycle=" << fixed(cycle / n)
            << " fool=" << fixed(fool / n) << " loss_d=" << fixed(d_loss / n) << " held=" << held << "/" << steps
            << "\n";
        out.flush();
        steps = held = 0;
        cycle = fool = d_loss = 0;
    };
    options.on_step = [&](const StepRecord& r) {
        if (r.epoch != epoch) flush();
        epoch = r.epoch;
        ++steps;
        held += r.held;
        cycle += r.loss_cycle;
        fool += r.loss_fool;
        d_loss += r.loss_d;
    };
    out << "run_dir=" << options.run_dir.string() << "\n";
    const auto result = run_training(config, options);
    flush();
    out << "steps=" << result.state.step << " run_dir=" << options.run_dir.string() << "\n";
    return kExitOk;
}

struct LoadedForEval {
    LoadedModel model;
    DatasetFile data;
    IdentitySplit split;
    EvalConfig eval;
};

LoadedForEval load_for_eval(const ModelFlags& f)
{
    LoadedForEval l{load_model(f.checkpoint), {}, {}, {}};
    const auto& cfg = l.model.config;
    l.data = load_dataset(f.data.empty() ? cfg.data.path : f.data);
    const std::size_t crop = cfg.model.crop;
    if (crop > l.data.side)
        throw ShapeError("checkpoint expects images [1, " + std::to_string(crop) + ", " + std::to_string(crop) +
                         "] but the dataset holds [1, " + std::to_string(l.data.side) + ", " +
                         std::to_string(l.data.side) + "]");
    l.split = split_identities(l.data, cfg.data.train_fraction, cfg.data.split_seed);
    l.eval = cfg.eval;
    if (f.seed_given) l.eval.seed = f.seed;
    return l;
}

std::filesystem::path default_output(const std::string& checkpoint, const std::string& what)
{
    const std::filesystem::path p(checkpoint);
    return p.parent_path() / (what + "_" + p.stem().string());
}

int cmd_eval(const EvalFlags& f, std::ostream& out)
{
    ProtocolSelection protocols = ProtocolSelection::both;
    if (f.protocol == "ff") protocols = ProtocolSelection::ff;
    else if (f.protocol == "fp") protocols = ProtocolSelection::fp;

    auto l = load_for_eval(f);
    if (protocols != ProtocolSelection::ff) {
        bool any_profile = false;
        for (const auto& s : l.data.samples)
            any_profile |= s.pose == Pose::profile &&
                           std::find(l.split.test.begin(), l.split.test.end(), s.identity_label) != l.split.test.end();
        if (!any_profile)
            throw std::runtime_error("protocol " + f.protocol +
                                     " needs profile samples, but the test identities have none");
    }
    const auto result = evaluate(l.model.state.nets, l.data, l.split, l.eval, protocols);
    const std::filesystem::path dir = f.out.empty() ? default_output(f.checkpoint, "eval") : std::filesystem::path(f.out);
    export_report(result, dir);
    for (const auto& m : result.report.rows()) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-28s %12.6g  n=%zu\n", m.name.c_str(), m.value, m.n);
        out << buf;
    }
    out << "report=" << dir.string() << "\n";
    return kExitOk;
}

int cmd_generate(const GenerateFlags& f, std::ostream& out, std::ostream& err)
{
    if (f.count < 1) throw UsageError("--count must be >= 1");
    const Pose pose = f.pose == "profile" ? Pose::profile : Pose::frontal;
    auto l = load_for_eval(f);
    auto samples = collect_samples(l.data, l.split.test, l.model.config.model.crop);
    std::size_t count = static_cast<std::size_t>(f.count);
    if (count > samples.size()) {
        err << "warning: --count " << count << " exceeds the " << samples.size() << " test samples; using "
            << samples.size() << "\n";
        count = samples.size();
    }
    samples.resize(count);
    const Tensor inputs = stack_images(samples);
    const Tensor generated = generate_at_pose(l.model.state.nets.generator, inputs, pose, l.eval.seed);
    const auto mosaic = pair_mosaic(inputs, generated, l.eval.pairs_per_row);
    const std::filesystem::path path =
        f.out.empty() ? default_output(f.checkpoint, std::string("generate_") + pose_name(pose)).string() + ".pgm"
                      : f.out;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file(path, encode_pgm(mosaic));
    out << "pairs=" << count << " pose=" << pose_name(pose) << " file=" << path.string() << "\n";
    return kExitOk;
}

int cmd_project(const ModelFlags& f, std::ostream& out)
{
    auto l = load_for_eval(f);
    std::vector<std::uint32_t> everyone(l.data.num_identities);
    for (std::uint32_t i = 0; i < l.data.num_identities; ++i) everyone[i] = i;
    const auto samples = collect_samples(l.data, everyone, l.model.config.model.crop);
    const Matrix codes = to_matrix(l.model.state.nets.generator.ea().encode(stack_images(samples), false).identity);
    const auto& e = l.eval;
    const auto result =
        tsne(codes, {e.perplexity, e.tsne_iterations, e.tsne_learning_rate, e.exaggeration, e.exaggeration_iterations,
                     e.seed});
    std::vector<ProjectionPoint> points;
    for (std::size_t i = 0; i < samples.size(); ++i)
        points.push_back({result.points(i, 0), result.points(i, 1), samples[i].identity_label, samples[i].pose});
    const std::filesystem::path path =
        f.out.empty() ? default_output(f.checkpoint, "projection").string() + ".csv" : f.out;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file(path, format_projection_csv(points));
    out << "points=" << points.size() << " final_kl=" << fixed(result.final_kl) << " file=" << path.string() << "\n";
    return kExitOk;
}

void add_model_flags(CLI::App* cmd, ModelFlags& f)
{
    cmd->add_option("--checkpoint", f.checkpoint, "PIGC checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", f.data, "PIGD dataset (default: data.path of the checkpoint config)");
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&f](const std::uint64_t& s) {
            f.seed = s;
            f.seed_given = true;
        },
        "evaluation seed (default: eval.seed of the checkpoint config)");
}

}  // namespace

std::string config_help()
{
    std::string text = "Config keys (key = default  # note):\n";
    for (const auto& k : config_keys()) text += "  " + k.name + " = " + k.default_value + "  # " + k.note + "\n";
    return text;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Cyclic weight-shared encoder-decoder GAN on procedural glyphs", "pigan"};
    app.require_subcommand(1);

    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write a procedural glyph dataset (PIGD)");
    gen_cmd->add_option("--ids", gen.ids, "identities")->capture_default_str();
    gen_cmd->add_option("--frontal", gen.frontal, "frontal views per identity")->capture_default_str();
    gen_cmd->add_option("--profile", gen.profile, "profile views per identity")->capture_default_str();
    gen_cmd->add_option("--side", gen.side, "image side in pixels")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "master seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output file")->capture_default_str();

    TrainFlags train;
    auto* train_cmd = app.add_subcommand("train", "train from a config file into a run directory");
    train_cmd->add_option("--config", train.config, "config file of key = value lines")->check(CLI::ExistingFile);
    train_cmd->add_option("--resume", train.resume, "continue from an epoch checkpoint")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train.out, "run directory (default run_<unixtime>_<seed>)");
    train_cmd->add_option("--set", train.overrides, "override one config key, key=value (repeatable)");
    train_cmd->footer(config_help());

    EvalFlags eval;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test identities");
    add_model_flags(eval_cmd, eval);
    eval_cmd->add_option("--protocol", eval.protocol, "verification protocols")
        ->check(CLI::IsMember({"ff", "fp", "both"}))
        ->capture_default_str();
    eval_cmd->add_option("--out", eval.out, "report directory (default eval_<checkpoint> beside it)");

    GenerateFlags generate;
    auto* gen_img_cmd = app.add_subcommand("generate", "decode test inputs at a chosen pose into a pair mosaic");
    add_model_flags(gen_img_cmd, generate);
    gen_img_cmd->add_option("--pose", generate.pose, "target pose")
        ->check(CLI::IsMember({"frontal", "profile"}))
        ->capture_default_str();
    gen_img_cmd->add_option("--count", generate.count, "input|output pairs")->capture_default_str();
    gen_img_cmd->add_option("--out", generate.out, "PGM file");

    ModelFlags project;
    auto* project_cmd = app.add_subcommand("project", "t-SNE projection of every sample's identity code");
    add_model_flags(project_cmd, project);
    project_cmd->add_option("--out", project.out, "CSV file");

    app.footer(config_help());

    std::vector<std::string> argv_store{"pigan"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen, out);
        if (*train_cmd) return cmd_train(train, out);
        if (*eval_cmd) return cmd_eval(eval, out);
        if (*gen_img_cmd) return cmd_generate(generate, out, err);
        if (*project_cmd) return cmd_project(project, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingError& e) {
        err << "error: training aborted: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace pigan::cli
