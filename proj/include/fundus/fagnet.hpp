#ifndef FUNDUS_FAGNET_HPP
#define FUNDUS_FAGNET_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fundus/image.hpp"

namespace fundus {

class Config;

enum class Head { Age, Gender };
enum class Mode { Train, Eval };

std::string to_string(Head h);
Head parse_head(const std::string& text);

struct FagNetConfig {
    std::int64_t input_size = 512;
    std::int64_t base_filters = 32;
    std::int64_t attention_kernel = 5;
    Head head = Head::Age;
    std::array<double, 3> dropout_rates{0.9, 0.8, 0.5};
    std::array<std::int64_t, 3> fc_sizes{512, 256, 128};
    std::int64_t tail_filters = 1024;
    // Convolutions per block stack.
    std::int64_t conv_depth = 2;
    // Age head output is age_offset + age_scale * linear(x).
    double age_offset = 0.0;
    double age_scale = 1.0;

    void validate() const;
    static FagNetConfig from_config(const Config& config);
    void to_config(Config& config) const;
};

/// Channel-wise mean and max maps, concatenated, convolved to one map and
/// squashed by a sigmoid; the input is gated by that map.
class SpatialAttentionImpl : public torch::nn::Module {
public:
    explicit SpatialAttentionImpl(std::int64_t kernel);

    torch::Tensor forward(const torch::Tensor& x);
    /// [N, 1, H, W] gate values in (0,1).
    torch::Tensor attention_map(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SpatialAttention);

/// Conv stack, optional attention, batch-norm, ReLU, optional 2x2 maxpool.
class FagBlockImpl : public torch::nn::Module {
public:
    FagBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t depth, bool attention,
                 std::int64_t attention_kernel, bool pool);

    torch::Tensor forward(torch::Tensor x);

private:
    torch::nn::Sequential stack{nullptr};
    SpatialAttention sab{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
    bool pool_;
};
TORCH_MODULE(FagBlock);

class FagNetImpl : public torch::nn::Module {
public:
    explicit FagNetImpl(const FagNetConfig& config);

    /// Age head: [N] ages in years. Gender head: [N, 2] probabilities
    /// (column 0 male, column 1 female).
    torch::Tensor forward(const torch::Tensor& x);

    /// Pre-activation head output: [N] raw age or [N, 2] logits.
    /// When `trace` is given, the spatial size after block1, block2..block6
    /// and the tail is appended to it.
    torch::Tensor logits(const torch::Tensor& x, std::vector<std::int64_t>* trace = nullptr);

    const FagNetConfig& config() const { return config_; }

private:
    FagNetConfig config_;
    FagBlock block1{nullptr}, block2{nullptr}, block3{nullptr}, block4{nullptr}, block5{nullptr}, block6{nullptr};
    torch::nn::Conv2d cmp_conv{nullptr};
    torch::nn::Conv2d tail_conv{nullptr};
    torch::nn::BatchNorm2d tail_bn{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr}, out{nullptr};
    torch::nn::Dropout drop1{nullptr}, drop2{nullptr}, drop3{nullptr};
};
TORCH_MODULE(FagNet);

/// Applies a spatial attention gate with a fresh kernel x kernel convolution.
/// Throws invalid-config for an even kernel.
torch::Tensor spatial_attention(const torch::Tensor& features, std::int64_t kernel);

FagNet build_fagnet(const FagNetConfig& config);

/// Runs the network over a batch of images. Train mode applies dropout and
/// batch statistics; when `dropout_seed` is set the global generator is
/// reseeded first. Eval mode is deterministic.
torch::Tensor fagnet_forward(FagNet& net, const std::vector<ImageTensor>& images, Mode mode,
                             std::optional<std::uint64_t> dropout_seed = std::nullopt);

}  // namespace fundus

#endif
