#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pigan/rng.hpp"
#include "pigan/tensor.hpp"

namespace pigan {

enum class Pose : std::uint8_t { frontal = 0, profile = 1 };

Pose pose_from_label(unsigned value);
inline unsigned pose_label(Pose p) { return static_cast<unsigned>(p); }
const char* pose_name(Pose p);

using Point2 = std::array<double, 2>;
using RawImage = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kBackgroundLevel = 16;

struct GlyphMark {
    double x, y, radius;
    bool operator==(const GlyphMark&) const = default;
};

/// Procedural identity: a star-shaped closed polygon plus a few off-centre
/// marks. Coordinates live on the canvas square [-1, 1]^2.
struct GlyphIdentity {
    std::uint32_t identity_id = 0;
    std::uint64_t seed = 0;
    std::vector<double> radii;   // one per vertex, 5 to 9 vertices
    std::vector<double> angles;  // increasing polar angles
    std::vector<GlyphMark> marks;

    std::vector<Point2> polygon() const;
    /// Flat parameter vector: vertex count, radii, angles, then (x, y, r) per mark.
    std::vector<double> stroke_params() const;
    bool operator==(const GlyphIdentity&) const = default;
};

GlyphIdentity generate_identity(std::uint32_t identity_id, std::uint64_t master_seed);

/// Forward map of the profile pose on canvas coordinates: a horizontal shear,
/// a rotation, then a fixed horizontal offset.
Point2 profile_transform(Point2 p);

/// Rasterizes the glyph at the requested pose into a side x side u8 image.
RawImage render(const GlyphIdentity& identity, Pose pose, std::size_t side);
/// Warps a frontal raster into the profile pose (bilinear resampling).
RawImage apply_pose_transform(std::span<const std::uint8_t> image, std::size_t side);

/// Crops crop_side x crop_side and rescales u8 to [-1, 1] as x / 127.5 - 1.
/// With an rng the crop offset is random, otherwise it is centred.
Tensor preprocess(std::span<const std::uint8_t> raw, std::size_t side, std::size_t crop_side, Rng* rng);

struct RawSample {
    RawImage pixels;
    std::uint32_t identity_label = 0;
    Pose pose = Pose::frontal;
    bool operator==(const RawSample&) const = default;
};

/// In-memory PIGD dataset. Samples are identity-major; within an identity all
/// frontal views precede the profile views.
struct DatasetFile {
    static constexpr std::uint16_t kVersion = 1;

    std::uint16_t version = kVersion;
    std::uint32_t num_identities = 0;
    std::uint32_t frontal_views = 0;
    std::uint32_t profile_views = 0;
    std::uint32_t side = 0;
    std::vector<RawSample> samples;

    std::size_t views_per_identity() const { return std::size_t{frontal_views} + profile_views; }
    bool operator==(const DatasetFile&) const = default;
};

DatasetFile build_dataset(std::uint32_t num_identities, std::uint32_t frontal_views, std::uint32_t profile_views,
                          std::uint32_t side, std::uint64_t master_seed);

void write_dataset(std::ostream& out, const DatasetFile& data);
DatasetFile read_dataset(std::istream& in);
void save_dataset(const DatasetFile& data, const std::filesystem::path& path);
DatasetFile load_dataset(const std::filesystem::path& path);

struct IdentitySplit {
    std::vector<std::uint32_t> train;
    std::vector<std::uint32_t> test;
};

/// Identity-disjoint split; round(fraction * n) identities go to train.
IdentitySplit split_identities(const DatasetFile& data, double train_fraction, std::uint64_t seed);

/// Preprocessed view of one stored sample.
struct Sample {
    Tensor image;  // [1, crop, crop]
    std::uint32_t identity_label = 0;
    Pose pose = Pose::frontal;
};

/// Eval-mode (centred crop) samples for every stored sample whose identity
/// is in `identities`, in file order.
std::vector<Sample> collect_samples(const DatasetFile& data, std::span<const std::uint32_t> identities,
                                    std::size_t crop_side);

}  // namespace pigan
