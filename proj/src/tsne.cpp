// Exact t-SNE (van der Maaten & Hinton): Gaussian input affinities at a fixed
// perplexity, Student-t output affinities, momentum gradient descent with
// per-coordinate gains and early exaggeration.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pigan/evaluation.hpp"

namespace pigan {

namespace {

constexpr double kMinProbability = 1e-12;
constexpr std::size_t kMomentumSwitch = 250;

Matrix squared_distances(const Matrix& x)
{
    const std::size_t n = x.rows;
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < x.cols; ++c) {
                const double diff = x(i, c) - x(j, c);
                s += diff * diff;
            }
            d(i, j) = d(j, i) = s;
        }
    return d;
}

/// Row i of the conditional affinities p_{j|i}, with the Gaussian precision
/// found by bisection so that the row entropy equals log(perplexity).
void conditional_row(const Matrix& dist, std::size_t i, double perplexity, std::vector<double>& row)
{
    const std::size_t n = dist.rows;
    const double target = std::log(perplexity);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (j != i) nearest = std::min(nearest, dist(i, j));

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
        double sum = 0, weighted = 0;
        for (std::size_t j = 0; j < n; ++j) {
            // shifting by the nearest distance keeps exp() away from underflow
            row[j] = j == i ? 0.0 : std::exp(-beta * (dist(i, j) - nearest));
            sum += row[j];
            weighted += row[j] * (dist(i, j) - nearest);
        }
        const double entropy = std::log(sum) + beta * weighted / sum;
        for (auto& p : row) p /= sum;
        const double gap = entropy - target;
        if (std::abs(gap) < 1e-10) break;
        if (gap > 0) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
        } else {
            hi = beta;
            beta = (beta + lo) / 2;
        }
    }
}

double kl_divergence(const Matrix& p, const Matrix& y)
{
    const std::size_t n = y.rows;
    Matrix num(n, n);
    double z = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            num(i, j) = num(j, i) = 1.0 / (1.0 + dx * dx + dy * dy);
            z += 2 * num(i, j);
        }
    double kl = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double q = std::max(num(i, j) / z, kMinProbability);
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

}  // namespace

TsneResult tsne(const Matrix& x, const TsneOptions& options)
{
    const std::size_t n = x.rows;
    if (options.perplexity <= 1) throw std::invalid_argument("t-SNE: perplexity must exceed 1");
    if (static_cast<double>(n) < 3 * options.perplexity)
        throw std::invalid_argument("t-SNE: " + std::to_string(n) + " points are too few for perplexity " +
                                    std::to_string(options.perplexity) + " (need 3x)");
    if (options.iterations <= options.exaggeration_iterations)
        throw std::invalid_argument("t-SNE: iterations must exceed the exaggeration phase");

    const Matrix dist = squared_distances(x);
    Matrix p(n, n);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        conditional_row(dist, i, options.perplexity, row);
        for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double sym = std::max((p(i, j) + p(j, i)) / (2.0 * n), kMinProbability);
            p(i, j) = p(j, i) = sym;
        }

    Rng rng(options.seed);
    TsneResult result;
    Matrix& y = result.points;
    y = Matrix(n, 2);
    for (auto& v : y.data) v = 1e-4 * rng.normal();

    Matrix update(n, 2), gains(n, 2), grad(n, 2), num(n, n);
    std::fill(gains.data.begin(), gains.data.end(), 1.0);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        const double exaggeration = it < options.exaggeration_iterations ? options.exaggeration : 1.0;
        double z = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
                num(i, j) = num(j, i) = 1.0 / (1.0 + dx * dx + dy * dy);
                z += 2 * num(i, j);
            }
        std::fill(grad.data.begin(), grad.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double coeff = 4.0 * (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
                grad(i, 0) += coeff * (y(i, 0) - y(j, 0));
                grad(i, 1) += coeff * (y(i, 1) - y(j, 1));
            }

        const double momentum = it < kMomentumSwitch ? 0.5 : 0.8;
        for (std::size_t k = 0; k < y.data.size(); ++k) {
            const bool same_sign = (grad.data[k] > 0) == (update.data[k] > 0);
            gains.data[k] = std::max(same_sign ? gains.data[k] * 0.8 : gains.data[k] + 0.2, 0.01);
            update.data[k] = momentum * update.data[k] - options.learning_rate * gains.data[k] * grad.data[k];
            y.data[k] += update.data[k];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
        }
        if (it + 1 == options.exaggeration_iterations) result.kl_after_exaggeration = kl_divergence(p, y);
    }
    result.final_kl = kl_divergence(p, y);
    return result;
}

}  // namespace pigan
