#include "pigan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "pigan/binary_io.hpp"

namespace pigan {

namespace {

constexpr double kGlyphScale = 0.62;
constexpr double kMinAreaFraction = 0.05;
constexpr double kProfileShear = 0.4;
constexpr double kProfileRotation = 15.0 * std::numbers::pi / 180.0;
constexpr double kProfileOffset = 0.2;
constexpr double kMaxJitterRotation = 5.0 * std::numbers::pi / 180.0;
constexpr std::uint8_t kFillLevel = 176;
constexpr std::uint8_t kMarkLevel = 255;
constexpr int kSuperSample = 4;

using Mat2 = std::array<double, 4>;  // row-major

Point2 apply(const Mat2& m, Point2 p)
{
    return {m[0] * p[0] + m[1] * p[1], m[2] * p[0] + m[3] * p[1]};
}

Mat2 inverse(const Mat2& m)
{
    const double det = m[0] * m[3] - m[1] * m[2];
    return {m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};
}

Mat2 rotation(double theta)
{
    return {std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta)};
}

Mat2 multiply(const Mat2& a, const Mat2& b)
{
    return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3]};
}

const Mat2& profile_matrix()
{
    static const Mat2 m = multiply(rotation(kProfileRotation), Mat2{1.0, kProfileShear, 0.0, 1.0});
    return m;
}

double shoelace(const std::vector<Point2>& poly)
{
    double a = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    return std::abs(a) / 2;
}

bool inside_polygon(const std::vector<Point2>& poly, Point2 p)
{
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
    }
    return in;
}

double pixel_to_canvas(double pixel, std::size_t side)
{
    return pixel / static_cast<double>(side) * 2.0 - 1.0;
}

double canvas_to_pixel(double u, std::size_t side)
{
    return (u + 1.0) / 2.0 * static_cast<double>(side);
}

/// Output pixel centre p' samples the input at m^-1 (p' - t) with bilinear weights.
RawImage warp(std::span<const std::uint8_t> image, std::size_t side, const Mat2& forward, Point2 t = {0, 0})
{
    if (image.size() != side * side) throw std::invalid_argument("warp: image does not match side");
    const Mat2 inv = inverse(forward);
    RawImage out(side * side);
    auto fetch = [&](long x, long y) -> double {
        if (x < 0 || y < 0 || x >= static_cast<long>(side) || y >= static_cast<long>(side)) return kBackgroundLevel;
        return image[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)];
    };
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const Point2 dst{pixel_to_canvas(x + 0.5, side), pixel_to_canvas(y + 0.5, side)};
            const Point2 src = apply(inv, {dst[0] - t[0], dst[1] - t[1]});
            const double sx = canvas_to_pixel(src[0], side) - 0.5;
            const double sy = canvas_to_pixel(src[1], side) - 0.5;
            const long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            const double v = (1 - fy) * ((1 - fx) * fetch(x0, y0) + fx * fetch(x0 + 1, y0)) +
                             fy * ((1 - fx) * fetch(x0, y0 + 1) + fx * fetch(x0 + 1, y0 + 1));
            out[y * side + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    return out;
}

RawImage rasterize(const GlyphIdentity& g, std::size_t side)
{
    const auto poly = g.polygon();
    RawImage out(side * side);
    constexpr double samples = kSuperSample * kSuperSample;
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            double acc = 0;
            for (int sy = 0; sy < kSuperSample; ++sy)
                for (int sx = 0; sx < kSuperSample; ++sx) {
                    const Point2 p{pixel_to_canvas(x + (sx + 0.5) / kSuperSample, side),
                                   pixel_to_canvas(y + (sy + 0.5) / kSuperSample, side)};
                    double level = kBackgroundLevel;
                    if (inside_polygon(poly, p)) level = kFillLevel;
                    for (const auto& m : g.marks) {
                        const double dx = p[0] - m.x, dy = p[1] - m.y;
                        if (dx * dx + dy * dy <= m.radius * m.radius) level = kMarkLevel;
                    }
                    acc += level;
                }
            out[y * side + x] = static_cast<std::uint8_t>(std::lround(acc / samples));
        }
    return out;
}

}  // namespace

Pose pose_from_label(unsigned value)
{
    if (value > 1) throw std::invalid_argument("pose label must be 0 or 1, got " + std::to_string(value));
    return static_cast<Pose>(value);
}

const char* pose_name(Pose p)
{
    return p == Pose::frontal ? "frontal" : "profile";
}

std::vector<Point2> GlyphIdentity::polygon() const
{
    std::vector<Point2> poly;
    poly.reserve(radii.size());
    for (std::size_t i = 0; i < radii.size(); ++i)
        poly.push_back({kGlyphScale * radii[i] * std::cos(angles[i]), kGlyphScale * radii[i] * std::sin(angles[i])});
    return poly;
}

std::vector<double> GlyphIdentity::stroke_params() const
{
    std::vector<double> p{static_cast<double>(radii.size())};
    p.insert(p.end(), radii.begin(), radii.end());
    p.insert(p.end(), angles.begin(), angles.end());
    for (const auto& m : marks) p.insert(p.end(), {m.x, m.y, m.radius});
    return p;
}

GlyphIdentity generate_identity(std::uint32_t identity_id, std::uint64_t master_seed)
{
    GlyphIdentity g;
    g.identity_id = identity_id;
    // Multiplication by an odd constant and splitmix64 are both bijective, so
    // distinct ids under one master seed get distinct seeds.
    g.seed = splitmix64(master_seed ^ (0x9e3779b97f4a7c15ULL * (std::uint64_t{identity_id} + 1)));
    Rng rng(g.seed);
    const double canvas_area = 4.0;
    do {
        const std::size_t n = 5 + rng.below(5);
        const double sector = 2 * std::numbers::pi / static_cast<double>(n);
        const double offset = rng.uniform(0, 2 * std::numbers::pi);
        g.radii.resize(n);
        g.angles.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            g.radii[i] = rng.uniform(0.55, 1.0);
            g.angles[i] = offset + sector * (static_cast<double>(i) + rng.uniform(-0.35, 0.35));
        }
    } while (shoelace(g.polygon()) <= kMinAreaFraction * canvas_area);

    const std::size_t marks = 1 + rng.below(3);
    for (std::size_t i = 0; i < marks; ++i) {
        const double theta = rng.uniform(0, 2 * std::numbers::pi);
        const double r = kGlyphScale * rng.uniform(0.1, 0.45);
        g.marks.push_back({r * std::cos(theta), r * std::sin(theta), rng.uniform(0.07, 0.12)});
    }
    return g;
}

Point2 profile_transform(Point2 p)
{
    const Point2 q = apply(profile_matrix(), p);
    return {q[0] + kProfileOffset, q[1]};
}

RawImage apply_pose_transform(std::span<const std::uint8_t> image, std::size_t side)
{
    return warp(image, side, profile_matrix(), {kProfileOffset, 0.0});
}

RawImage render(const GlyphIdentity& identity, Pose pose, std::size_t side)
{
    if (side < 16) throw std::invalid_argument("render: side must be >= 16, got " + std::to_string(side));
    RawImage frontal = rasterize(identity, side);
    if (pose == Pose::frontal) return frontal;
    return apply_pose_transform(frontal, side);
}

Tensor preprocess(std::span<const std::uint8_t> raw, std::size_t side, std::size_t crop_side, Rng* rng)
{
    if (raw.size() != side * side)
        throw std::invalid_argument("preprocess: " + std::to_string(raw.size()) + " pixels for side " +
                                    std::to_string(side));
    if (crop_side == 0 || crop_side > side)
        throw std::invalid_argument("preprocess: crop " + std::to_string(crop_side) + " exceeds aligned side " +
                                    std::to_string(side));
    const std::size_t slack = side - crop_side;
    std::size_t ox = slack / 2, oy = slack / 2;
    if (rng) {
        ox = rng->below(slack + 1);
        oy = rng->below(slack + 1);
    }
    std::vector<float> data(crop_side * crop_side);
    for (std::size_t y = 0; y < crop_side; ++y)
        for (std::size_t x = 0; x < crop_side; ++x)
            data[y * crop_side + x] = static_cast<float>(raw[(y + oy) * side + x + ox]) / 127.5f - 1.0f;
    return Tensor(Shape{1, crop_side, crop_side}, std::move(data));
}

DatasetFile build_dataset(std::uint32_t num_identities, std::uint32_t frontal_views, std::uint32_t profile_views,
                          std::uint32_t side, std::uint64_t master_seed)
{
    if (num_identities == 0 || frontal_views == 0 || profile_views == 0)
        throw std::invalid_argument("build_dataset: identity and view counts must be >= 1");
    if (side < 16) throw std::invalid_argument("build_dataset: side must be >= 16");

    DatasetFile data;
    data.num_identities = num_identities;
    data.frontal_views = frontal_views;
    data.profile_views = profile_views;
    data.side = side;
    data.samples.reserve(std::size_t{num_identities} * data.views_per_identity());
    for (std::uint32_t id = 0; id < num_identities; ++id) {
        const GlyphIdentity glyph = generate_identity(id, master_seed);
        for (Pose pose : {Pose::frontal, Pose::profile}) {
            const RawImage base = render(glyph, pose, side);
            const std::uint32_t views = pose == Pose::frontal ? frontal_views : profile_views;
            for (std::uint32_t v = 0; v < views; ++v) {
                Rng rng(splitmix64(glyph.seed + (std::uint64_t{pose_label(pose)} << 32) + v));
                const double angle = rng.uniform(-kMaxJitterRotation, kMaxJitterRotation);
                const double brightness = rng.uniform(0.9, 1.1);
                RawImage view = warp(base, side, rotation(angle));
                for (auto& px : view)
                    px = static_cast<std::uint8_t>(std::clamp(std::lround(px * brightness), 0L, 255L));
                data.samples.push_back({std::move(view), id, pose});
            }
        }
    }
    return data;
}

void write_dataset(std::ostream& out, const DatasetFile& data)
{
    BinaryWriter w(out);
    w.bytes("PIGD", 4);
    w.u16(data.version);
    w.u32(data.num_identities);
    w.u32(data.frontal_views);
    w.u32(data.profile_views);
    w.u32(data.side);
    for (const auto& s : data.samples) {
        w.bytes(s.pixels.data(), s.pixels.size());
        w.u32(s.identity_label);
        w.u8(static_cast<std::uint8_t>(pose_label(s.pose)));
    }
}

DatasetFile read_dataset(std::istream& in)
{
    BinaryReader r(in, "PIGD");
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "PIGD") r.fail("bad magic");
    DatasetFile data;
    data.version = r.u16();
    if (data.version != DatasetFile::kVersion) r.fail("unsupported version " + std::to_string(data.version));
    data.num_identities = r.u32();
    data.frontal_views = r.u32();
    data.profile_views = r.u32();
    data.side = r.u32();
    if (data.side < 1 || data.side > 4096) r.fail("image side " + std::to_string(data.side) + " out of range");
    const std::size_t per_id = data.views_per_identity();
    if (data.num_identities == 0 || per_id == 0) r.fail("empty dataset header");
    const std::size_t total = std::size_t{data.num_identities} * per_id;
    if (total > (std::size_t{1} << 26)) r.fail("sample count too large");

    for (std::size_t k = 0; k < total; ++k) {
        RawSample s;
        s.pixels.resize(std::size_t{data.side} * data.side);
        r.bytes(s.pixels.data(), s.pixels.size());
        s.identity_label = r.u32();
        const auto pose = r.u8();
        if (pose > 1) r.fail("pose label " + std::to_string(pose) + " at sample " + std::to_string(k));
        s.pose = static_cast<Pose>(pose);
        const auto expected_id = static_cast<std::uint32_t>(k / per_id);
        const Pose expected_pose = (k % per_id) < data.frontal_views ? Pose::frontal : Pose::profile;
        if (s.identity_label != expected_id || s.pose != expected_pose)
            r.fail("sample " + std::to_string(k) + " breaks identity-major order");
        data.samples.push_back(std::move(s));
    }
    if (!r.at_end()) r.fail("trailing bytes after declared samples");
    return data;
}

void save_dataset(const DatasetFile& data, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_dataset(out, data);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

DatasetFile load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_dataset(in);
}

IdentitySplit split_identities(const DatasetFile& data, double train_fraction, std::uint64_t seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train fraction must lie in (0, 1)");
    if (data.num_identities < 2) throw std::invalid_argument("split: need at least 2 identities");
    std::vector<std::uint32_t> ids(data.num_identities);
    for (std::uint32_t i = 0; i < data.num_identities; ++i) ids[i] = i;
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    const auto n = static_cast<long>(data.num_identities);
    const auto n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
    IdentitySplit split;
    split.train.assign(ids.begin(), ids.begin() + n_train);
    split.test.assign(ids.begin() + n_train, ids.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::vector<Sample> collect_samples(const DatasetFile& data, std::span<const std::uint32_t> identities,
                                    std::size_t crop_side)
{
    std::vector<Sample> out;
    for (const auto& s : data.samples) {
        if (std::find(identities.begin(), identities.end(), s.identity_label) == identities.end()) continue;
        out.push_back({preprocess(s.pixels, data.side, crop_side, nullptr), s.identity_label, s.pose});
    }
    return out;
}

}  // namespace pigan
