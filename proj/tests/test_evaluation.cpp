#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "pigan/evaluation.hpp"
#include "scratch_dir.hpp"

using namespace pigan;

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0)
{
    Matrix m(rows, cols);
    for (auto& v : m.data) v = scale * rng.normal();
    return m;
}

/// `clusters` Gaussian blobs of `per` points, centres `spread` apart along distinct axes.
Matrix blobs(std::size_t clusters, std::size_t per, std::size_t dim, double spread, Rng& rng,
             std::vector<std::uint32_t>& labels)
{
    Matrix m(clusters * per, dim);
    labels.clear();
    for (std::size_t k = 0; k < clusters; ++k)
        for (std::size_t i = 0; i < per; ++i) {
            const std::size_t r = k * per + i;
            for (std::size_t c = 0; c < dim; ++c) m(r, c) = rng.normal();
            m(r, k) += spread;
            labels.push_back(static_cast<std::uint32_t>(k));
        }
    return m;
}

std::uint64_t hash_state(const std::vector<NamedTensor>& tensors)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tensors)
        for (float v : t.tensor.data()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            h = (h ^ bits) * 1099511628211ULL;
        }
    return h;
}

std::string read_all(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("to_matrix flattens trailing axes")
{
    const Tensor t({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    const auto m = to_matrix(t);
    CHECK(m.rows == 2);
    CHECK(m.cols == 4);
    CHECK(m(1, 2) == 7.0);
}

TEST_CASE("pose probe oracles")
{
    ProbeOptions opt;

    SUBCASE("identical codes give the majority rate")
    {
        Matrix codes(100, 8);
        std::fill(codes.data.begin(), codes.data.end(), 0.3);
        std::vector<unsigned> labels(100, 0);
        std::fill(labels.begin() + 60, labels.end(), 1u);
        const auto r = pose_probe(codes, labels, opt);
        CHECK(r.accuracy == doctest::Approx(0.6));
        CHECK(r.n == 100);
        CHECK(r.folds == 5);
    }
    SUBCASE("pose embedded in one dimension is found")
    {
        Matrix codes(60, 256);
        std::vector<unsigned> labels(60);
        for (std::size_t i = 0; i < 60; ++i) {
            labels[i] = static_cast<unsigned>(i % 3 == 0);
            codes(i, 0) = labels[i];
        }
        CHECK(pose_probe(codes, labels, opt).accuracy == 1.0);

        // a few noisy distractor dimensions do not hide it
        Rng rng(4);
        auto noisy = gaussian_matrix(60, 8, rng);
        for (std::size_t i = 0; i < 60; ++i) noisy(i, 0) = labels[i] ? 3.0 : -3.0;
        CHECK(pose_probe(noisy, labels, opt).accuracy == 1.0);
    }
    SUBCASE("random codes stay near chance over 20 seeds")
    {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            Rng rng(seed);
            const auto codes = gaussian_matrix(100, 256, rng);
            std::vector<unsigned> labels(100);
            for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<unsigned>(i % 2);
            opt.seed = seed;
            const double acc = pose_probe(codes, labels, opt).accuracy;
            CHECK(acc >= 0.35);
            CHECK(acc <= 0.65);
        }
    }
    SUBCASE("fold count shrinks to the minority class")
    {
        Rng rng(2);
        const auto codes = gaussian_matrix(12, 4, rng);
        std::vector<unsigned> labels{0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
        CHECK(pose_probe(codes, labels, opt).folds == 3);
    }
    SUBCASE("errors")
    {
        Rng rng(3);
        const auto codes = gaussian_matrix(10, 4, rng);
        CHECK_THROWS_AS(pose_probe(codes, std::vector<unsigned>(10, 1), opt), std::invalid_argument);
        CHECK_THROWS_AS(pose_probe(codes, std::vector<unsigned>(9, 1), opt), std::invalid_argument);
        std::vector<unsigned> one_profile(10, 0);
        one_profile[0] = 1;
        CHECK_THROWS_AS(pose_probe(codes, one_profile, opt), std::invalid_argument);
    }
}

TEST_CASE("PSNR and cycle metrics")
{
    CHECK(psnr_from_mse(0.0) == std::numeric_limits<double>::max());
    CHECK(psnr_from_mse(4.0) == doctest::Approx(0.0));
    CHECK(psnr_from_mse(0.04) == doctest::Approx(20.0));

    const Tensor x({2, 1, 2, 2}, {1, -1, 1, 1, -1, -1, 1, -1});
    const auto same = cycle_metrics_of(x, x.clone());
    CHECK(same.mse == 0.0);
    CHECK(same.psnr == std::numeric_limits<double>::max());
    const auto flipped = cycle_metrics_of(x, scale(x, -1.0f));
    CHECK(flipped.mse == doctest::Approx(4.0));
    CHECK(flipped.psnr == doctest::Approx(0.0));
    CHECK(flipped.n == 2);

    Rng rng(5);
    std::vector<float> a(3 * 64), b(3 * 64);
    for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
    const auto m = cycle_metrics_of(Tensor({3, 64}, a), Tensor({3, 64}, b));
    CHECK(std::abs(m.psnr - 10 * std::log10(4 / m.mse)) <= 1e-9 * std::abs(m.psnr));

    CHECK_THROWS_AS(cycle_metrics_of(Tensor({0, 4}, {}), Tensor({0, 4}, {})), std::invalid_argument);
    CHECK_THROWS_AS(cycle_metrics_of(x, Tensor({2, 4}, std::vector<float>(8))), ShapeError);

    ModelConfig mc;
    auto nets = init_networks(mc, 3);
    std::vector<float> img(4 * 38 * 38);
    for (auto& v : img) v = static_cast<float>(rng.uniform(-1, 1));
    const Tensor images({4, 1, 38, 38}, img);
    const std::vector<unsigned> poses{0, 1, 0, 1};
    const auto c1 = cycle_metrics(nets.generator, images, poses, 9);
    const auto c2 = cycle_metrics(nets.generator, images, poses, 9);
    CHECK(c1.mse == c2.mse);
    CHECK(std::isfinite(c1.psnr));
    CHECK(c1.n == 4);
}

TEST_CASE("verification oracles")
{
    const std::vector<std::uint32_t> ids{0, 0, 0, 1, 1, 1, 2, 2, 2};
    const std::vector<Pose> poses{Pose::frontal, Pose::frontal, Pose::profile, Pose::frontal, Pose::frontal,
                                  Pose::profile, Pose::frontal, Pose::frontal, Pose::profile};

    SUBCASE("one-hot identity codes verify perfectly")
    {
        Matrix codes(9, 3);
        for (std::size_t i = 0; i < 9; ++i) codes(i, ids[i]) = 1.0;
        const auto ff = verification(codes, ids, poses, Protocol::frontal_frontal);
        const auto fp = verification(codes, ids, poses, Protocol::frontal_profile);
        CHECK(ff.accuracy == 1.0);
        CHECK(fp.accuracy == 1.0);
        CHECK(ff.pairs == 15);  // C(6, 2)
        CHECK(ff.positives == 3);
        CHECK(fp.pairs == 18);  // 6 frontal x 3 profile
        CHECK(fp.positives == 6);
        CHECK(ff.threshold == doctest::Approx(0.5));
    }
    SUBCASE("constant codes score the larger class rate")
    {
        Matrix codes(9, 3);
        std::fill(codes.data.begin(), codes.data.end(), 1.0);
        const auto ff = verification(codes, ids, poses, Protocol::frontal_frontal);
        CHECK(ff.accuracy == doctest::Approx(12.0 / 15.0));
        const auto fp = verification(codes, ids, poses, Protocol::frontal_profile);
        CHECK(fp.accuracy == doctest::Approx(12.0 / 18.0));
    }
    SUBCASE("cosine is symmetric and scale free")
    {
        Rng rng(6);
        for (int k = 0; k < 20; ++k) {
            const auto m = gaussian_matrix(2, 16, rng);
            CHECK(cosine_similarity(m.row(0), m.row(1)) == cosine_similarity(m.row(1), m.row(0)));
        }
        const std::vector<double> a{1, 2, 3}, b{2, 4, 6}, z{0, 0, 0};
        CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
        CHECK(cosine_similarity(a, z) == 0.0);
    }
    SUBCASE("errors")
    {
        Matrix codes(9, 3);
        const std::vector<Pose> all_frontal(9, Pose::frontal);
        CHECK_THROWS_AS(verification(codes, ids, all_frontal, Protocol::frontal_profile), std::invalid_argument);
        const std::vector<std::uint32_t> one_id(9, 4);
        CHECK_THROWS_AS(verification(codes, one_id, poses, Protocol::frontal_frontal), std::invalid_argument);
        CHECK(std::string(protocol_name(Protocol::frontal_profile)) == "fp");
    }
}

TEST_CASE("silhouette by hand")
{
    Matrix p(4, 1);
    p(0, 0) = 0;
    p(1, 0) = 1;
    p(2, 0) = 10;
    p(3, 0) = 11;
    const std::vector<std::uint32_t> labels{0, 0, 1, 1};
    const double expect = (9.5 / 10.5 + 8.5 / 9.5) / 2;
    CHECK(silhouette(p, labels) == doctest::Approx(expect));
    CHECK_THROWS_AS(silhouette(p, std::vector<std::uint32_t>(4, 0)), std::invalid_argument);
}

TEST_CASE("t-SNE")
{
    TsneOptions opt;

    SUBCASE("far-separated clusters stay separated")
    {
        int good = 0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(100 + seed);
            std::vector<std::uint32_t> labels;
            const auto x = blobs(2, 40, 256, 30.0, rng, labels);
            opt.seed = seed;
            const auto r = tsne(x, opt);
            good += silhouette(r.points, labels) > 0.5;
        }
        CHECK(good >= 4);
    }
    SUBCASE("KL falls after exaggeration and the run is deterministic")
    {
        Rng rng(7);
        std::vector<std::uint32_t> labels;
        const auto x = blobs(3, 20, 32, 10.0, rng, labels);
        const auto a = tsne(x, opt);
        const auto b = tsne(x, opt);
        CHECK(a.final_kl < a.kl_after_exaggeration);
        CHECK(a.final_kl >= 0);
        CHECK(a.points.data == b.points.data);
        for (double v : a.points.data) CHECK(std::isfinite(v));
        opt.seed = 2;
        CHECK(tsne(x, opt).points.data != a.points.data);
    }
    SUBCASE("duplicated rows land together")
    {
        Rng rng(8);
        std::vector<std::uint32_t> labels;
        auto x = blobs(2, 30, 16, 12.0, rng, labels);
        for (std::size_t c = 0; c < x.cols; ++c) x(1, c) = x(0, c);
        const auto r = tsne(x, opt);
        // cluster scale: mean distance of cluster 0 points to their centroid
        double cx = 0, cy = 0;
        for (std::size_t i = 0; i < 30; ++i) {
            cx += r.points(i, 0) / 30;
            cy += r.points(i, 1) / 30;
        }
        double scale_sum = 0;
        for (std::size_t i = 0; i < 30; ++i) scale_sum += std::hypot(r.points(i, 0) - cx, r.points(i, 1) - cy) / 30;
        const double d = std::hypot(r.points(0, 0) - r.points(1, 0), r.points(0, 1) - r.points(1, 1));
        CHECK(d < scale_sum / 10);
    }
    SUBCASE("too few points for the perplexity")
    {
        Rng rng(9);
        CHECK_THROWS_AS(tsne(gaussian_matrix(44, 4, rng), opt), std::invalid_argument);
        CHECK_NOTHROW(tsne(gaussian_matrix(45, 4, rng), TsneOptions{15, 120, 100, 4, 100, 1}));
    }
}

TEST_CASE("report serialization")
{
    MetricsReport r;
    r.pose_probe = {0.583333333333, 5, 12};
    r.raw_pixel_probe = {0.916666666667, 5, 12};
    r.cycle = {0.0123456789, psnr_from_mse(0.0123456789), 12};
    r.verification_ff = VerificationResult{0.98, 0.123456, 28, 12};
    r.tsne_final_kl = 0.31415926535;
    r.tsne_points = 120;
    const auto rows = r.rows();
    CHECK(rows.size() == 7);  // no FP rows when FP was not run
    const std::string csv = format_metrics_csv(rows);
    CHECK(csv.rfind("metric,value,n\n", 0) == 0);
    const auto back = parse_metrics_csv(csv);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].name == rows[i].name);
        CHECK(back[i].n == rows[i].n);
        CHECK(back[i].value == doctest::Approx(rows[i].value).epsilon(1e-6));
    }
    CHECK_THROWS_AS(parse_metrics_csv("name,value\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_metrics_csv("metric,value,n\nbroken\n"), std::invalid_argument);

    const std::vector<ProjectionPoint> pts{{0.5, -1.25, 3, Pose::profile}, {2, 4, 0, Pose::frontal}};
    const auto proj = format_projection_csv(pts);
    CHECK(proj == "x,y,identity,pose\n0.5,-1.25,3,1\n2,4,0,0\n");
}

TEST_CASE("pair mosaic layout and PGM")
{
    const std::size_t n = 5, side = 4;
    const Tensor in = Tensor::full({n, 1, side, side}, -1.0f);
    const Tensor gen = Tensor::full({n, 1, side, side}, 1.0f);
    const auto m = pair_mosaic(in, gen, 2);
    CHECK(m.width == 2 * side * 2);
    CHECK(m.height == 3 * side);
    CHECK(m.pixels[0] == 0);          // first input
    CHECK(m.pixels[side] == 255);     // its generated partner
    CHECK(m.pixels[2 * side] == 0);   // second input
    CHECK(m.pixels[(2 * side) * m.width + 2 * side] == 0);  // empty slot in the last row
    const std::string pgm = encode_pgm(m);
    const std::string header = "P5\n16 12\n255\n";
    CHECK(pgm.substr(0, header.size()) == header);
    CHECK(pgm.size() == header.size() + m.width * m.height);
    CHECK_THROWS_AS(pair_mosaic(in, Tensor::full({n, 1, side, 3}, 0.0f), 2), ShapeError);
    CHECK_THROWS_AS(pair_mosaic(in, gen, 0), std::invalid_argument);
}

TEST_CASE("whole-model evaluation leaves the model untouched and exports")
{
    const auto data = build_dataset(10, 4, 2, 40, 21);
    const auto split = split_identities(data, 0.7, 1);
    REQUIRE(split.test.size() == 3);
    ModelConfig mc;
    mc.num_train_ids = split.train.size();
    auto nets = init_networks(mc, 5);
    EvalConfig ec;
    ec.tsne_iterations = 150;

    const auto before = hash_state(nets.state());
    const auto out = evaluate(nets, data, split, ec, ProtocolSelection::both);
    CHECK(hash_state(nets.state()) == before);

    const auto& r = out.report;
    CHECK(r.pose_probe.n == 18);
    CHECK(r.raw_pixel_probe.n == 18);
    CHECK(r.cycle.n == 18);
    REQUIRE(r.verification_ff);
    REQUIRE(r.verification_fp);
    CHECK(r.verification_ff->pairs == 66);  // C(12, 2)
    CHECK(r.verification_fp->pairs == 72);  // 12 x 6
    CHECK(out.projection.size() == 60);
    CHECK(r.tsne_points == 60);
    CHECK(out.mosaic.width == 2 * 38 * ec.pairs_per_row);

    const auto again = evaluate(nets, data, split, ec, ProtocolSelection::both);
    CHECK(format_metrics_csv(again.report.rows()) == format_metrics_csv(r.rows()));

    const auto ff_only = evaluate(nets, data, split, ec, ProtocolSelection::ff);
    CHECK(ff_only.report.verification_ff);
    CHECK_FALSE(ff_only.report.verification_fp);

    ScratchDir dir("eval");
    export_report(out, dir / "report");
    const auto metrics = parse_metrics_csv(read_all(dir / "report" / "metrics.csv"));
    CHECK(metrics.size() == r.rows().size());
    const auto proj = read_all(dir / "report" / "projection.csv");
    CHECK(std::count(proj.begin(), proj.end(), '\n') == 61);
    CHECK(read_all(dir / "report" / "mosaic.pgm").rfind("P5\n", 0) == 0);

    CHECK_THROWS(export_report(out, "/proc/pigan_not_writable/x"));
}
