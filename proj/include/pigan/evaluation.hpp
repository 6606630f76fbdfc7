#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pigan/config.hpp"
#include "pigan/dataset.hpp"
#include "pigan/networks.hpp"

namespace pigan {

/// Dense row-major matrix of doubles; the evaluation code's working type.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

Matrix to_matrix(const Tensor& t);  // [N, ...] -> N x (numel / N)

// ---------------------------------------------------------------------------
// Pose leakage probe

struct ProbeOptions {
    std::size_t steps = 200;
    double learning_rate = 0.1;
    std::size_t folds = 5;  // upper bound; capped by the minority class count
    std::uint64_t seed = 1;
};

struct ProbeResult {
    double accuracy = 0;
    std::size_t folds = 0;
    std::size_t n = 0;
};

/// Held-out accuracy of a logistic regression from features to binary labels,
/// by stratified k-fold cross-validation. Features are z-scored with the
/// training fold's statistics. Throws if only one class is present.
ProbeResult pose_probe(const Matrix& features, std::span<const unsigned> labels, const ProbeOptions& options);

// ---------------------------------------------------------------------------
// Cyclic reconstruction

struct CycleMetrics {
    double mse = 0;
    double psnr = 0;
    std::size_t n = 0;
};

/// 10 log10(4 / mse) for images in [-1, 1]; the largest double when mse is 0.
double psnr_from_mse(double mse);
/// Both tensors [N, ...]; per-sample mse averaged over samples.
CycleMetrics cycle_metrics_of(const Tensor& original, const Tensor& cycled);
/// X~ = DB(f(EB(DA(f(X), frontal, z1))), Y^p, z2) in eval mode with noise from `seed`.
CycleMetrics cycle_metrics(Generator& g, const Tensor& images, std::span<const unsigned> poses, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Verification

enum class Protocol { frontal_frontal, frontal_profile };

const char* protocol_name(Protocol p);

struct VerificationResult {
    double accuracy = 0;
    double threshold = 0;  // pairs with cosine >= threshold are called "same"
    std::size_t pairs = 0;
    std::size_t positives = 0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Exhaustive unordered pairs filtered by protocol (FF: both frontal, FP: one
/// of each), scored by cosine similarity at the accuracy-maximising threshold.
VerificationResult verification(const Matrix& codes, std::span<const std::uint32_t> identities,
                                std::span<const Pose> poses, Protocol protocol);

// ---------------------------------------------------------------------------
// t-SNE

struct TsneOptions {
    double perplexity = 15.0;
    std::size_t iterations = 500;
    double learning_rate = 100.0;
    double exaggeration = 4.0;
    std::size_t exaggeration_iterations = 100;
    std::uint64_t seed = 1;
};

struct TsneResult {
    Matrix points;             // N x 2
    double kl_after_exaggeration = 0;  // KL(P || Q) once exaggeration ends
    double final_kl = 0;
};

/// Exact t-SNE. Throws if rows < 3 * perplexity.
TsneResult tsne(const Matrix& x, const TsneOptions& options);

/// Mean silhouette coefficient of `points` under `labels` (Euclidean).
double silhouette(const Matrix& points, std::span<const std::uint32_t> labels);

// ---------------------------------------------------------------------------
// Reports

struct Metric {
    std::string name;
    double value = 0;
    std::size_t n = 0;
};

struct MetricsReport {
    ProbeResult pose_probe;
    ProbeResult raw_pixel_probe;
    CycleMetrics cycle;
    std::optional<VerificationResult> verification_ff;
    std::optional<VerificationResult> verification_fp;
    double tsne_final_kl = 0;
    std::size_t tsne_points = 0;

    std::vector<Metric> rows() const;
};

std::string format_metrics_csv(std::span<const Metric> rows);
std::vector<Metric> parse_metrics_csv(const std::string& text);

struct ProjectionPoint {
    double x = 0;
    double y = 0;
    std::uint32_t identity = 0;
    Pose pose = Pose::frontal;
};

std::string format_projection_csv(std::span<const ProjectionPoint> points);

/// Grayscale image block in row-major u8.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Lays out (input, generated) pairs side by side, `pairs_per_row` per row.
/// Both tensors are [N, 1, side, side] in [-1, 1].
GrayImage pair_mosaic(const Tensor& inputs, const Tensor& generated, std::size_t pairs_per_row);
std::string encode_pgm(const GrayImage& image);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// ---------------------------------------------------------------------------
// Whole-model evaluation

enum class ProtocolSelection { ff, fp, both };

struct EvaluationOutput {
    MetricsReport report;
    std::vector<ProjectionPoint> projection;
    GrayImage mosaic;
};

/// Runs every metric on the test identities of `split`; the projection
/// covers every sample in the dataset.
EvaluationOutput evaluate(Networks& nets, const DatasetFile& data, const IdentitySplit& split,
                          const EvalConfig& config, ProtocolSelection protocols);

/// metrics.csv, projection.csv and mosaic.pgm in `dir`.
void export_report(const EvaluationOutput& out, const std::filesystem::path& dir);

/// Decodes every input at `pose` with noise from `seed` (eval mode).
Tensor generate_at_pose(Generator& g, const Tensor& inputs, Pose pose, std::uint64_t seed);

/// Stacks the preprocessed images of `samples` into [N, 1, crop, crop].
Tensor stack_images(std::span<const Sample> samples);

}  // namespace pigan
