#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pigan/optim.hpp"
#include "pigan/rng.hpp"
#include "pigan/tensor.hpp"

namespace pigan {

struct ModelConfig {
    std::size_t channels = 1;
    std::size_t crop = 38;
    std::size_t identity_dim = 256;
    std::size_t pose_dim = 2;
    std::size_t noise_dim = 16;
    std::size_t base_channels = 16;  // doubled after each of the four conv layers
    std::size_t lc_hidden = 64;
    std::size_t num_train_ids = 18;
    double init_std = 0.02;
    float bn_momentum = 0.9f;

    /// Throws std::invalid_argument on unusable dimensions.
    void validate() const;
    /// Spatial side after each encoder conv, starting with `crop`.
    std::vector<std::size_t> spatial_sides() const;
    std::size_t latent_dim() const { return identity_dim + pose_dim; }
    std::size_t trunk_features() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LatentCode {
    Tensor identity;  // [B, identity_dim]
    Tensor pose;      // [B, pose_dim]
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormRunning<float> running;

    BatchNormLayer() = default;
    BatchNormLayer(std::size_t features, float momentum);
    Tensor forward(const Tensor& x, bool training);
};

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};

struct ConvLayer {
    Tensor weight;
    Tensor bias;
};

/// Strided conv stack shared in shape by the encoder and the discriminator
/// trunk: conv(k3, s2, p1) + leaky relu, batch norm after layers 2 to 4.
class ConvTrunk {
public:
    ConvTrunk() = default;
    ConvTrunk(const ModelConfig& config, Rng& rng);

    /// [B, C, crop, crop] -> [B, trunk_features]
    Tensor forward(const Tensor& x, bool training);
    void parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;

    std::vector<ConvLayer> convs;
    std::vector<BatchNormLayer> norms;  // one per conv after the first

private:
    ModelConfig config_;
};

class Encoder {
public:
    Encoder(const ModelConfig& config, Rng& rng);

    LatentCode encode(const Tensor& image, bool training);
    void parameters(std::vector<NamedTensor>& out) const;
    void buffers(std::vector<NamedTensor>& out) const;

    ConvTrunk trunk;
    DenseLayer head;

private:
    ModelConfig config_;
};

class Decoder {
public:
    Decoder(const ModelConfig& config, Rng& rng);

    /// identity [B, D_id], pose one-hot [B, D_pose], z [B, D_z] -> image [B, C, crop, crop]
    Tensor decode(const Tensor& identity, const Tensor& pose, const Tensor& z, bool training);
    std::size_t noise_dim() const { return config_.noise_dim; }
    void parameters(std::vector<NamedTensor>& out) const;
    void buffers(std::vector<NamedTensor>& out) const;

    DenseLayer project;
    BatchNormLayer project_norm;
    std::vector<ConvLayer> deconvs;
    std::vector<BatchNormLayer> norms;  // after every deconv except the last

private:
    ModelConfig config_;
    std::vector<std::size_t> output_padding_;
};

/// Encoder/decoder pair. EA and EB (DA and DB) are two names for the same
/// object, so there is exactly one copy of each parameter.
class Generator {
public:
    Generator(const ModelConfig& config, Rng& rng);

    Encoder& ea() { return *encoder_; }
    Encoder& eb() { return *encoder_; }
    Decoder& da() { return *decoder_; }
    Decoder& db() { return *decoder_; }
    const Encoder& ea() const { return *encoder_; }
    const Encoder& eb() const { return *encoder_; }
    const Decoder& da() const { return *decoder_; }
    const Decoder& db() const { return *decoder_; }

    std::vector<NamedTensor> parameters() const;
    std::vector<NamedTensor> buffers() const;

private:
    std::shared_ptr<Encoder> encoder_;
    std::shared_ptr<Decoder> decoder_;
};

/// Binary pose classifier over the identity code (one logit, profile = 1).
class LatentClassifier {
public:
    LatentClassifier(const ModelConfig& config, Rng& rng);

    Tensor classify(const Tensor& identity);  // [B, D_id] -> [B, 1]
    std::vector<NamedTensor> parameters() const;

    DenseLayer hidden;
    DenseLayer out;

private:
    ModelConfig config_;
};

struct DiscriminatorOutput {
    Tensor realness;  // [B, 1]
    Tensor pose;      // [B, 2]
    Tensor identity;  // [B, num_train_ids + 1], last class = fake
};

class Discriminator {
public:
    Discriminator(const ModelConfig& config, Rng& rng);

    DiscriminatorOutput discriminate(const Tensor& image, bool training);
    std::vector<NamedTensor> parameters() const;
    std::vector<NamedTensor> buffers() const;
    std::size_t fake_class() const { return config_.num_train_ids; }

    ConvTrunk trunk;
    DenseLayer realness_head;
    DenseLayer pose_head;
    DenseLayer identity_head;

private:
    ModelConfig config_;
};

struct Networks {
    ModelConfig config;
    Generator generator;
    LatentClassifier lc;
    Discriminator d;

    /// Every tensor that defines the model state, parameters then buffers,
    /// under stable unique names.
    std::vector<NamedTensor> state() const;
};

/// Weights ~ N(0, init_std^2), biases 0, batch-norm scale 1.
Networks init_networks(const ModelConfig& config, std::uint64_t seed);

/// [B, 2] one-hot rows for the given pose labels.
Tensor pose_one_hot(std::span<const unsigned> poses, std::size_t pose_dim = 2);

}  // namespace pigan
