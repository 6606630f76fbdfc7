#include "pigan/networks.hpp"

#include <stdexcept>

namespace pigan {

namespace {

constexpr std::size_t kConvLayers = 4;
constexpr float kLeakySlope = 0.2f;
const Conv2dOptions kDown{2, 1, 0};

std::size_t down_side(std::size_t n)
{
    return (n - 1) / 2 + 1;  // k3, s2, p1
}

std::size_t trunk_channels(const ModelConfig& c, std::size_t layer)
{
    return c.base_channels << layer;
}

DenseLayer make_dense(std::size_t in, std::size_t out, const ModelConfig& c, Rng& rng)
{
    return {normal_init({in, out}, 0.0, c.init_std, rng, true), Tensor::zeros({out}, true)};
}

ConvLayer make_conv(Shape weight_shape, std::size_t bias_size, const ModelConfig& c, Rng& rng)
{
    return {normal_init(weight_shape, 0.0, c.init_std, rng, true), Tensor::zeros({bias_size}, true)};
}

void push_dense(const std::string& name, const DenseLayer& d, std::vector<NamedTensor>& out)
{
    out.push_back({name + ".weight", d.weight});
    out.push_back({name + ".bias", d.bias});
}

void push_norm(const std::string& name, const BatchNormLayer& bn, std::vector<NamedTensor>& out)
{
    out.push_back({name + ".gamma", bn.gamma});
    out.push_back({name + ".beta", bn.beta});
}

void push_running(const std::string& name, const BatchNormLayer& bn, std::vector<NamedTensor>& out)
{
    out.push_back({name + ".running_mean", bn.running.mean});
    out.push_back({name + ".running_var", bn.running.var});
}

void expect_shape(const char* what, const Tensor& t, const Shape& tail)
{
    bool ok = t.defined() && t.rank() == tail.size() + 1;
    for (std::size_t i = 0; ok && i < tail.size(); ++i) ok = t.dim(i + 1) == tail[i];
    if (!ok) {
        std::string expected = "[B";
        for (auto d : tail) expected += ", " + std::to_string(d);
        throw ShapeError(std::string(what) + ": expected " + expected + "], got " +
                         (t.defined() ? shape_to_string(t.shape()) : std::string("undefined")));
    }
}

}  // namespace

void ModelConfig::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
    };
    require(channels >= 1, "channels must be >= 1");
    require(crop >= 8, "crop must be >= 8");
    require(identity_dim >= 1 && pose_dim == 2, "identity_dim must be >= 1 and pose_dim must be 2");
    require(noise_dim >= 1 && base_channels >= 1 && lc_hidden >= 1, "layer sizes must be >= 1");
    require(num_train_ids >= 1, "num_train_ids must be >= 1");
    require(init_std > 0, "init_std must be positive");
    require(bn_momentum >= 0 && bn_momentum < 1, "bn_momentum must lie in [0, 1)");
}

std::vector<std::size_t> ModelConfig::spatial_sides() const
{
    std::vector<std::size_t> sides{crop};
    for (std::size_t i = 0; i < kConvLayers; ++i) sides.push_back(down_side(sides.back()));
    return sides;
}

std::size_t ModelConfig::trunk_features() const
{
    const std::size_t side = spatial_sides().back();
    return trunk_channels(*this, kConvLayers - 1) * side * side;
}

BatchNormLayer::BatchNormLayer(std::size_t features, float momentum)
    : gamma(Tensor::full({features}, 1.0f, true)), beta(Tensor::zeros({features}, true))
{
    running.mean = Tensor::zeros({features});
    running.var = Tensor::full({features}, 1.0f);
    running.momentum = momentum;
}

Tensor BatchNormLayer::forward(const Tensor& x, bool training)
{
    return batch_norm(x, gamma, beta, &running, training);
}

ConvTrunk::ConvTrunk(const ModelConfig& config, Rng& rng) : config_(config)
{
    std::size_t in = config.channels;
    for (std::size_t i = 0; i < kConvLayers; ++i) {
        const std::size_t out = trunk_channels(config, i);
        convs.push_back(make_conv({out, in, 3, 3}, out, config, rng));
        if (i > 0) norms.emplace_back(out, config.bn_momentum);
        in = out;
    }
}

Tensor ConvTrunk::forward(const Tensor& x, bool training)
{
    expect_shape("conv trunk input", x, {config_.channels, config_.crop, config_.crop});
    Tensor h = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
        h = conv2d(h, convs[i].weight, convs[i].bias, kDown);
        if (i > 0) h = norms[i - 1].forward(h, training);
        h = leaky_relu(h, kLeakySlope);
    }
    return reshape(h, {x.dim(0), config_.trunk_features()});
}

void ConvTrunk::parameters(const std::string& prefix, std::vector<NamedTensor>& out) const
{
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const std::string name = prefix + ".conv" + std::to_string(i);
        out.push_back({name + ".weight", convs[i].weight});
        out.push_back({name + ".bias", convs[i].bias});
        if (i > 0) push_norm(prefix + ".bn" + std::to_string(i), norms[i - 1], out);
    }
}

void ConvTrunk::buffers(const std::string& prefix, std::vector<NamedTensor>& out) const
{
    for (std::size_t i = 0; i < norms.size(); ++i) push_running(prefix + ".bn" + std::to_string(i + 1), norms[i], out);
}

Encoder::Encoder(const ModelConfig& config, Rng& rng)
    : trunk(config, rng), head(make_dense(config.trunk_features(), config.latent_dim(), config, rng)), config_(config)
{
}

LatentCode Encoder::encode(const Tensor& image, bool training)
{
    const Tensor out = linear(trunk.forward(image, training), head.weight, head.bias);
    return {slice(out, 1, 0, config_.identity_dim), slice(out, 1, config_.identity_dim, config_.pose_dim)};
}

void Encoder::parameters(std::vector<NamedTensor>& out) const
{
    trunk.parameters("encoder", out);
    push_dense("encoder.head", head, out);
}

void Encoder::buffers(std::vector<NamedTensor>& out) const
{
    trunk.buffers("encoder", out);
}

Decoder::Decoder(const ModelConfig& config, Rng& rng) : config_(config)
{
    const auto sides = config.spatial_sides();
    const std::size_t top = trunk_channels(config, kConvLayers - 1);
    const std::size_t in = config.identity_dim + config.pose_dim + config.noise_dim;
    project = make_dense(in, top * sides.back() * sides.back(), config, rng);
    project_norm = BatchNormLayer(top, config.bn_momentum);
    for (std::size_t i = 0; i < kConvLayers; ++i) {
        const std::size_t layer = kConvLayers - 1 - i;
        const std::size_t cin = trunk_channels(config, layer);
        const std::size_t cout = layer == 0 ? config.channels : trunk_channels(config, layer - 1);
        deconvs.push_back(make_conv({cin, cout, 3, 3}, cout, config, rng));
        if (layer > 0) norms.emplace_back(cout, config.bn_momentum);
        // k3, s2, p1 transpose yields 2n - 1; one extra row restores even sides.
        output_padding_.push_back(sides[layer] - (2 * sides[layer + 1] - 1));
    }
}

Tensor Decoder::decode(const Tensor& identity, const Tensor& pose, const Tensor& z, bool training)
{
    expect_shape("decoder identity code", identity, {config_.identity_dim});
    expect_shape("decoder pose", pose, {config_.pose_dim});
    expect_shape("decoder noise", z, {config_.noise_dim});
    const std::size_t batch = identity.dim(0);
    if (pose.dim(0) != batch || z.dim(0) != batch)
        throw ShapeError("decoder: batch sizes differ: " + shape_to_string(identity.shape()) + ", " +
                         shape_to_string(pose.shape()) + ", " + shape_to_string(z.shape()));
    const auto sides = config_.spatial_sides();
    const std::size_t top = trunk_channels(config_, kConvLayers - 1);

    Tensor h = linear(concat<float>({identity, pose, z}, 1), project.weight, project.bias);
    h = reshape(h, {batch, top, sides.back(), sides.back()});
    h = relu(project_norm.forward(h, training));
    for (std::size_t i = 0; i < deconvs.size(); ++i) {
        h = conv2d_transpose(h, deconvs[i].weight, deconvs[i].bias, Conv2dOptions{2, 1, output_padding_[i]});
        if (i + 1 < deconvs.size())
            h = relu(norms[i].forward(h, training));
    }
    return tanh(h);
}

void Decoder::parameters(std::vector<NamedTensor>& out) const
{
    push_dense("decoder.project", project, out);
    push_norm("decoder.project_bn", project_norm, out);
    for (std::size_t i = 0; i < deconvs.size(); ++i) {
        const std::string name = "decoder.deconv" + std::to_string(i);
        out.push_back({name + ".weight", deconvs[i].weight});
        out.push_back({name + ".bias", deconvs[i].bias});
        if (i < norms.size()) push_norm("decoder.bn" + std::to_string(i), norms[i], out);
    }
}

void Decoder::buffers(std::vector<NamedTensor>& out) const
{
    push_running("decoder.project_bn", project_norm, out);
    for (std::size_t i = 0; i < norms.size(); ++i) push_running("decoder.bn" + std::to_string(i), norms[i], out);
}

Generator::Generator(const ModelConfig& config, Rng& rng)
    : encoder_(std::make_shared<Encoder>(config, rng)), decoder_(std::make_shared<Decoder>(config, rng))
{
}

std::vector<NamedTensor> Generator::parameters() const
{
    std::vector<NamedTensor> out;
    encoder_->parameters(out);
    decoder_->parameters(out);
    return out;
}

std::vector<NamedTensor> Generator::buffers() const
{
    std::vector<NamedTensor> out;
    encoder_->buffers(out);
    decoder_->buffers(out);
    return out;
}

LatentClassifier::LatentClassifier(const ModelConfig& config, Rng& rng)
    : hidden(make_dense(config.identity_dim, config.lc_hidden, config, rng)),
      out(make_dense(config.lc_hidden, 1, config, rng)),
      config_(config)
{
}

Tensor LatentClassifier::classify(const Tensor& identity)
{
    expect_shape("latent classifier input", identity, {config_.identity_dim});
    return linear(leaky_relu(linear(identity, hidden.weight, hidden.bias), kLeakySlope), out.weight, out.bias);
}

std::vector<NamedTensor> LatentClassifier::parameters() const
{
    std::vector<NamedTensor> params;
    push_dense("lc.hidden", hidden, params);
    push_dense("lc.out", out, params);
    return params;
}

Discriminator::Discriminator(const ModelConfig& config, Rng& rng)
    : trunk(config, rng),
      realness_head(make_dense(config.trunk_features(), 1, config, rng)),
      pose_head(make_dense(config.trunk_features(), config.pose_dim, config, rng)),
      identity_head(make_dense(config.trunk_features(), config.num_train_ids + 1, config, rng)),
      config_(config)
{
}

DiscriminatorOutput Discriminator::discriminate(const Tensor& image, bool training)
{
    const Tensor features = trunk.forward(image, training);
    return {linear(features, realness_head.weight, realness_head.bias),
            linear(features, pose_head.weight, pose_head.bias),
            linear(features, identity_head.weight, identity_head.bias)};
}

std::vector<NamedTensor> Discriminator::parameters() const
{
    std::vector<NamedTensor> out;
    trunk.parameters("d", out);
    push_dense("d.realness", realness_head, out);
    push_dense("d.pose", pose_head, out);
    push_dense("d.identity", identity_head, out);
    return out;
}

std::vector<NamedTensor> Discriminator::buffers() const
{
    std::vector<NamedTensor> out;
    trunk.buffers("d", out);
    return out;
}

std::vector<NamedTensor> Networks::state() const
{
    std::vector<NamedTensor> out = generator.parameters();
    for (auto& p : lc.parameters()) out.push_back(std::move(p));
    for (auto& p : d.parameters()) out.push_back(std::move(p));
    for (auto& b : generator.buffers()) out.push_back(std::move(b));
    for (auto& b : d.buffers()) out.push_back(std::move(b));
    return out;
}

Networks init_networks(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Rng rng(seed);
    Generator g(config, rng);
    LatentClassifier lc(config, rng);
    Discriminator d(config, rng);
    return {config, std::move(g), std::move(lc), std::move(d)};
}

Tensor pose_one_hot(std::span<const unsigned> poses, std::size_t pose_dim)
{
    std::vector<float> data(poses.size() * pose_dim, 0.0f);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (poses[i] >= pose_dim) throw std::invalid_argument("pose_one_hot: label out of range");
        data[i * pose_dim + poses[i]] = 1.0f;
    }
    return Tensor({poses.size(), pose_dim}, std::move(data));
}

}  // namespace pigan
