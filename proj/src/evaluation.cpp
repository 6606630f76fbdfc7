#include "pigan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace pigan {

namespace {

double sigmoid_of(double z)
{
    return 1.0 / (1.0 + std::exp(-z));
}

Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng)
{
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor({rows, cols}, std::move(v));
}

Tensor one_hot_batch(std::size_t n, Pose pose)
{
    const std::vector<unsigned> poses(n, pose_label(pose));
    return pose_one_hot(poses);
}

std::uint8_t to_u8(float v)
{
    return static_cast<std::uint8_t>(std::clamp(std::lround((v + 1.0f) * 127.5f), 0L, 255L));
}

// Seeds for the independent parts of one evaluation.
enum class Stream : std::uint64_t { probe = 1, cycle, tsne, mosaic };

std::uint64_t stream_seed(std::uint64_t seed, Stream s)
{
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(s)));
}

}  // namespace

Matrix to_matrix(const Tensor& t)
{
    const std::size_t n = t.dim(0);
    Matrix m(n, n ? t.numel() / n : 0);
    std::copy(t.data().begin(), t.data().end(), m.data.begin());
    return m;
}

ProbeResult pose_probe(const Matrix& features, std::span<const unsigned> labels, const ProbeOptions& options)
{
    const std::size_t n = features.rows, d = features.cols;
    if (labels.size() != n) throw std::invalid_argument("pose probe: label count differs from feature rows");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] > 1) throw std::invalid_argument("pose probe: labels must be 0 or 1");
        by_class[labels[i]].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty())
        throw std::invalid_argument("pose probe: only one pose class present");
    const std::size_t k = std::min(options.folds, std::min(by_class[0].size(), by_class[1].size()));
    if (k < 2) throw std::invalid_argument("pose probe: each class needs at least 2 samples");

    // Stratified folds: each class is shuffled and dealt round-robin.
    Rng rng(options.seed);
    std::vector<std::size_t> fold(n);
    for (auto& members : by_class) {
        rng.shuffle(members.begin(), members.end());
        for (std::size_t j = 0; j < members.size(); ++j) fold[members[j]] = j % k;
    }

    std::size_t correct = 0;
    std::vector<double> mean(d), inv_std(d), w(d), grad(d), x(d);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train;
        for (std::size_t i = 0; i < n; ++i)
            if (fold[i] != f) train.push_back(i);
        const double m = static_cast<double>(train.size());
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0, sq = 0;
            for (auto i : train) {
                s += features(i, c);
                sq += features(i, c) * features(i, c);
            }
            mean[c] = s / m;
            const double var = std::max(0.0, sq / m - mean[c] * mean[c]);
            inv_std[c] = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
        }
        auto standardize = [&](std::size_t i) {
            for (std::size_t c = 0; c < d; ++c) x[c] = (features(i, c) - mean[c]) * inv_std[c];
        };

        std::fill(w.begin(), w.end(), 0.0);
        double b = 0;
        for (std::size_t step = 0; step < options.steps; ++step) {
            std::fill(grad.begin(), grad.end(), 0.0);
            double grad_b = 0;
            for (auto i : train) {
                standardize(i);
                const double err = sigmoid_of(std::inner_product(x.begin(), x.end(), w.begin(), b)) - labels[i];
                for (std::size_t c = 0; c < d; ++c) grad[c] += err * x[c];
                grad_b += err;
            }
            for (std::size_t c = 0; c < d; ++c) w[c] -= options.learning_rate * grad[c] / m;
            b -= options.learning_rate * grad_b / m;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (fold[i] != f) continue;
            standardize(i);
            const unsigned predicted = std::inner_product(x.begin(), x.end(), w.begin(), b) > 0 ? 1 : 0;
            correct += predicted == labels[i];
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(n), k, n};
}

double psnr_from_mse(double mse)
{
    if (mse <= 0) return std::numeric_limits<double>::max();
    return 10.0 * std::log10(4.0 / mse);
}

CycleMetrics cycle_metrics_of(const Tensor& original, const Tensor& cycled)
{
    if (original.shape() != cycled.shape())
        throw ShapeError("cycle metrics: " + shape_to_string(original.shape()) + " vs " +
                         shape_to_string(cycled.shape()));
    const std::size_t n = original.dim(0);
    if (n == 0) throw std::invalid_argument("cycle metrics: empty sample set");
    const std::size_t per = original.numel() / n;
    double total = 0;
    for (std::size_t s = 0; s < n; ++s) {
        double acc = 0;
        for (std::size_t j = s * per; j < (s + 1) * per; ++j) {
            const double diff = double(original.data()[j]) - double(cycled.data()[j]);
            acc += diff * diff;
        }
        total += acc / static_cast<double>(per);
    }
    const double mse = total / static_cast<double>(n);
    return {mse, psnr_from_mse(mse), n};
}

CycleMetrics cycle_metrics(Generator& g, const Tensor& images, std::span<const unsigned> poses, std::uint64_t seed)
{
    const std::size_t n = images.dim(0);
    if (n == 0) throw std::invalid_argument("cycle metrics: empty sample set");
    Rng rng(seed);
    const std::size_t noise = g.da().noise_dim();
    const Tensor z1 = gaussian(n, noise, rng);
    const Tensor z2 = gaussian(n, noise, rng);
    const auto codes = g.ea().encode(images, false);
    const Tensor generated = g.da().decode(codes.identity, one_hot_batch(n, Pose::frontal), z1, false);
    const auto cycled_codes = g.eb().encode(generated, false);
    const Tensor cycled = g.db().decode(cycled_codes.identity, pose_one_hot(poses), z2, false);
    return cycle_metrics_of(images, cycled);
}

const char* protocol_name(Protocol p)
{
    return p == Protocol::frontal_frontal ? "ff" : "fp";
}

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

VerificationResult verification(const Matrix& codes, std::span<const std::uint32_t> identities,
                                std::span<const Pose> poses, Protocol protocol)
{
    const std::size_t n = codes.rows;
    if (identities.size() != n || poses.size() != n)
        throw std::invalid_argument("verification: label counts differ from code rows");
    std::vector<std::uint32_t> distinct(identities.begin(), identities.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw std::invalid_argument("verification: needs at least 2 identities");
    if (protocol == Protocol::frontal_profile &&
        std::none_of(poses.begin(), poses.end(), [](Pose p) { return p == Pose::profile; }))
        throw std::invalid_argument("verification: frontal-profile protocol needs profile samples");

    std::vector<std::pair<double, bool>> scored;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool keep = protocol == Protocol::frontal_frontal
                                  ? poses[i] == Pose::frontal && poses[j] == Pose::frontal
                                  : poses[i] != poses[j];
            if (keep) scored.emplace_back(cosine_similarity(codes.row(i), codes.row(j)), identities[i] == identities[j]);
        }
    if (scored.empty())
        throw std::invalid_argument(std::string("verification: no pairs for protocol ") + protocol_name(protocol));
    std::sort(scored.begin(), scored.end());

    const std::size_t total = scored.size();
    const auto positives = static_cast<std::size_t>(
        std::count_if(scored.begin(), scored.end(), [](const auto& s) { return s.second; }));
    // Threshold below everything: every pair is called "same".
    std::size_t best_correct = positives;
    double best_threshold = scored.front().first;
    std::size_t correct = positives;
    for (std::size_t i = 0; i < total; ++i) {
        correct += scored[i].second ? -1 : 1;  // pair i flips to "different"
        const bool cut = i + 1 == total || scored[i + 1].first != scored[i].first;
        if (cut && correct > best_correct) {
            best_correct = correct;
            best_threshold = i + 1 == total ? scored[i].first + 1.0 : (scored[i].first + scored[i + 1].first) / 2;
        }
    }
    return {static_cast<double>(best_correct) / static_cast<double>(total), best_threshold, total, positives};
}

double silhouette(const Matrix& points, std::span<const std::uint32_t> labels)
{
    const std::size_t n = points.rows;
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t c = 0; c < points.cols; ++c) {
            const double d = points(i, c) - points(j, c);
            s += d * d;
        }
        return std::sqrt(s);
    };
    std::vector<std::uint32_t> classes(labels.begin(), labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw std::invalid_argument("silhouette: needs at least 2 clusters");

    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sum(classes.size(), 0.0);
        std::vector<std::size_t> count(classes.size(), 0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const auto k = std::lower_bound(classes.begin(), classes.end(), labels[j]) - classes.begin();
            sum[k] += dist(i, j);
            ++count[k];
        }
        const auto own = std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin();
        if (count[own] == 0) continue;  // singleton cluster scores 0
        const double a = sum[own] / count[own];
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < classes.size(); ++k)
            if (static_cast<std::ptrdiff_t>(k) != own && count[k] > 0) b = std::min(b, sum[k] / count[k]);
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

std::vector<Metric> MetricsReport::rows() const
{
    std::vector<Metric> out{
        {"pose_probe_accuracy", pose_probe.accuracy, pose_probe.n},
        {"raw_pixel_probe_accuracy", raw_pixel_probe.accuracy, raw_pixel_probe.n},
        {"cycle_mse", cycle.mse, cycle.n},
        {"cycle_psnr", cycle.psnr, cycle.n},
    };
    if (verification_ff) {
        out.push_back({"verification_ff", verification_ff->accuracy, verification_ff->pairs});
        out.push_back({"verification_ff_threshold", verification_ff->threshold, verification_ff->pairs});
    }
    if (verification_fp) {
        out.push_back({"verification_fp", verification_fp->accuracy, verification_fp->pairs});
        out.push_back({"verification_fp_threshold", verification_fp->threshold, verification_fp->pairs});
    }
    out.push_back({"tsne_final_kl", tsne_final_kl, tsne_points});
    return out;
}

std::string format_metrics_csv(std::span<const Metric> rows)
{
    std::string out = "metric,value,n\n";
    char buf[128];
    for (const auto& m : rows) {
        std::snprintf(buf, sizeof buf, ",%.9g,%zu\n", m.value, m.n);
        out += m.name + buf;
    }
    return out;
}

std::vector<Metric> parse_metrics_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "metric,value,n") throw std::invalid_argument("metrics csv: bad header");
    std::vector<Metric> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.rfind(',');
        if (a == std::string::npos || a == b) throw std::invalid_argument("metrics csv: bad row '" + line + "'");
        out.push_back({line.substr(0, a), std::stod(line.substr(a + 1, b - a - 1)),
                       static_cast<std::size_t>(std::stoull(line.substr(b + 1)))});
    }
    return out;
}

std::string format_projection_csv(std::span<const ProjectionPoint> points)
{
    std::string out = "x,y,identity,pose\n";
    char buf[128];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%u,%u\n", p.x, p.y, p.identity, pose_label(p.pose));
        out += buf;
    }
    return out;
}

GrayImage pair_mosaic(const Tensor& inputs, const Tensor& generated, std::size_t pairs_per_row)
{
    if (inputs.shape() != generated.shape() || inputs.rank() != 4 || inputs.dim(1) != 1)
        throw ShapeError("mosaic: expected matching [N, 1, H, W] tensors, got " + shape_to_string(inputs.shape()) +
                         " and " + shape_to_string(generated.shape()));
    if (pairs_per_row == 0) throw std::invalid_argument("mosaic: pairs_per_row must be >= 1");
    const std::size_t n = inputs.dim(0), h = inputs.dim(2), w = inputs.dim(3);
    const std::size_t rows = (n + pairs_per_row - 1) / pairs_per_row;
    GrayImage img{2 * w * pairs_per_row, h * std::max<std::size_t>(rows, 1), {}};
    img.pixels.assign(img.width * img.height, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t top = (k / pairs_per_row) * h, left = (k % pairs_per_row) * 2 * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t src = k * h * w + y * w + x;
                img.pixels[(top + y) * img.width + left + x] = to_u8(inputs.data()[src]);
                img.pixels[(top + y) * img.width + left + w + x] = to_u8(generated.data()[src]);
            }
    }
    return img;
}

std::string encode_pgm(const GrayImage& image)
{
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(image.pixels.begin(), image.pixels.end());
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensor generate_at_pose(Generator& g, const Tensor& inputs, Pose pose, std::uint64_t seed)
{
    const std::size_t n = inputs.dim(0);
    Rng rng(seed);
    const std::size_t noise = g.da().noise_dim();
    const Tensor z = gaussian(n, noise, rng);
    const auto codes = g.ea().encode(inputs, false);
    return g.da().decode(codes.identity, one_hot_batch(n, pose), z, false);
}

Tensor stack_images(std::span<const Sample> samples)
{
    if (samples.empty()) throw std::invalid_argument("stack_images: no samples");
    Shape shape{samples.size()};
    const auto& first = samples.front().image.shape();
    shape.insert(shape.end(), first.begin(), first.end());
    std::vector<float> data;
    data.reserve(shape_numel(shape));
    for (const auto& s : samples) {
        if (s.image.shape() != first) throw ShapeError("stack_images: mixed image shapes");
        data.insert(data.end(), s.image.data().begin(), s.image.data().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

EvaluationOutput evaluate(Networks& nets, const DatasetFile& data, const IdentitySplit& split,
                          const EvalConfig& config, ProtocolSelection protocols)
{
    const std::size_t crop = nets.config.crop;
    if (crop > data.side)
        throw ShapeError("model input [" + std::to_string(nets.config.channels) + ", " + std::to_string(crop) + ", " +
                         std::to_string(crop) + "] does not fit dataset images [1, " + std::to_string(data.side) +
                         ", " + std::to_string(data.side) + "]");
    auto& g = nets.generator;
    const auto test = collect_samples(data, split.test, crop);
    const Tensor images = stack_images(test);
    std::vector<unsigned> pose_labels;
    std::vector<Pose> poses;
    std::vector<std::uint32_t> ids;
    for (const auto& s : test) {
        pose_labels.push_back(pose_label(s.pose));
        poses.push_back(s.pose);
        ids.push_back(s.identity_label);
    }

    EvaluationOutput out;
    auto& report = out.report;
    const Matrix codes = to_matrix(g.ea().encode(images, false).identity);
    const ProbeOptions probe{config.probe_steps, config.probe_learning_rate, config.probe_folds,
                             stream_seed(config.seed, Stream::probe)};
    report.pose_probe = pose_probe(codes, pose_labels, probe);
    report.raw_pixel_probe = pose_probe(to_matrix(images), pose_labels, probe);
    report.cycle = cycle_metrics(g, images, pose_labels, stream_seed(config.seed, Stream::cycle));
    if (protocols != ProtocolSelection::fp)
        report.verification_ff = verification(codes, ids, poses, Protocol::frontal_frontal);
    if (protocols != ProtocolSelection::ff)
        report.verification_fp = verification(codes, ids, poses, Protocol::frontal_profile);

    std::vector<std::uint32_t> everyone(data.num_identities);
    std::iota(everyone.begin(), everyone.end(), 0u);
    const auto all = collect_samples(data, everyone, crop);
    const Matrix all_codes = to_matrix(g.ea().encode(stack_images(all), false).identity);
    const TsneOptions tsne_options{config.perplexity,   config.tsne_iterations,         config.tsne_learning_rate,
                                   config.exaggeration, config.exaggeration_iterations, stream_seed(config.seed, Stream::tsne)};
    const TsneResult projected = tsne(all_codes, tsne_options);
    report.tsne_final_kl = projected.final_kl;
    report.tsne_points = all.size();
    for (std::size_t i = 0; i < all.size(); ++i)
        out.projection.push_back({projected.points(i, 0), projected.points(i, 1), all[i].identity_label, all[i].pose});

    const Tensor generated = generate_at_pose(g, images, Pose::frontal, stream_seed(config.seed, Stream::mosaic));
    out.mosaic = pair_mosaic(images, generated, config.pairs_per_row);
    return out;
}

void export_report(const EvaluationOutput& out, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto rows = out.report.rows();
    write_file(dir / "metrics.csv", format_metrics_csv(rows));
    write_file(dir / "projection.csv", format_projection_csv(out.projection));
    write_file(dir / "mosaic.pgm", encode_pgm(out.mosaic));
}

}  // namespace pigan
