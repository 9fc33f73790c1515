#ifndef FUNDUS_FGCNET_HPP
#define FUNDUS_FGCNET_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fundus/image.hpp"
#include "fundus/losses.hpp"

namespace fundus {

class Config;

enum class EpsVariant {
    Standard,  // eps ~ N(0,1),                 z = mu + sigma * eps
    Paper,     // eps = |N(mu_label, sigma_label)|, z = mu + sigma^2 * eps
};

std::string to_string(EpsVariant v);
EpsVariant parse_eps_variant(const std::string& text);

struct FgcNetConfig {
    std::int64_t input_size = 512;
    std::int64_t stem_filters = 24;
    std::int64_t latent_dim = 64;
    EpsVariant eps_variant = EpsVariant::Standard;
    KlVariant kl_variant = KlVariant::Standard;
    std::string output_activation = "sigmoid";
    // Channel cap for encoder/decoder/discriminator; 0 keeps plain doubling.
    std::int64_t max_filters = 0;
    std::int64_t label_hidden = 64;
    std::int64_t disc_filters = 32;
    std::array<std::int64_t, 3> disc_fc{512, 256, 128};
    std::array<double, 3> disc_dropout{0.8, 0.7, 0.6};
    // Ages enter the label encoder and the discriminator target as age / age_norm.
    double age_norm = 100.0;
    bool use_skips = true;
    double sigma_floor = 1e-6;

    void validate() const;
    /// Encoder channels for the input block (level 0) and EB1..EB6.
    std::int64_t channels(int level) const;
    std::int64_t disc_channels(int level) const;
    std::int64_t bottleneck_side() const { return input_size / 64; }

    static FgcNetConfig from_config(const Config& config);
    void to_config(Config& config) const;
};

/// Feature maps captured at the input block (index 0) and EB1..EB6.
struct SkipSet {
    std::vector<torch::Tensor> maps;

    bool complete() const { return maps.size() == 7; }
    SkipSet zeros_like() const;
};

struct LatentState {
    torch::Tensor mu0, sigma0;   // image head
    torch::Tensor mu1, sigma1;   // label head
    torch::Tensor mu_l, sigma_m; // fused
    torch::Tensor epsilon;
    torch::Tensor z;
    torch::Tensor age_condition; // years, [N]
};

struct Moments {
    torch::Tensor mu;
    torch::Tensor sigma;
};

struct Encoded {
    torch::Tensor bottleneck;
    SkipSet skips;
};

class InputBlockImpl : public torch::nn::Module {
public:
    explicit InputBlockImpl(std::int64_t filters);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d stem{nullptr};
    // Parallel 1x1, 3x3, 5x5, 7x7 branches summed elementwise.
    std::array<torch::nn::Conv2d, 4> branches{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(InputBlock);

class EncoderBlockImpl : public torch::nn::Module {
public:
    EncoderBlockImpl(std::int64_t in_channels, std::int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d strided{nullptr}, normal{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(EncoderBlock);

class DecoderBlockImpl : public torch::nn::Module {
public:
    /// upsample: stride-2 transpose convolution; otherwise a stride-1 convolution.
    DecoderBlockImpl(std::int64_t in_channels, std::int64_t out_channels, bool upsample);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::ConvTranspose2d up{nullptr};
    torch::nn::Conv2d same{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(DecoderBlock);

class LabelEncoderImpl : public torch::nn::Module {
public:
    LabelEncoderImpl(std::int64_t hidden, std::int64_t latent_dim, double age_norm);
    /// ages: [N] years.
    Moments forward(const torch::Tensor& ages);

private:
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, mu{nullptr}, log_sigma{nullptr};
    double age_norm_;
};
TORCH_MODULE(LabelEncoder);

class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const FgcNetConfig& config);
    /// Predicted age in normalized units (years / age_norm), [N].
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential blocks{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr}, out{nullptr};
    torch::nn::Dropout drop1{nullptr}, drop2{nullptr}, drop3{nullptr};
};
TORCH_MODULE(Discriminator);

class FgcNetImpl : public torch::nn::Module {
public:
    explicit FgcNetImpl(const FgcNetConfig& config);

    const FgcNetConfig& config() const { return config_; }

    torch::Tensor input_block(const torch::Tensor& x);
    /// Runs the input block and EB1..EB6; skips hold all seven outputs.
    Encoded encode_image(const torch::Tensor& x);
    Moments image_moments(const torch::Tensor& bottleneck);
    /// ages: [N] years, each in [1, 120].
    Moments encode_label(const torch::Tensor& ages);
    torch::Tensor decode(const torch::Tensor& z, const SkipSet& skips);
    torch::Tensor discriminate_normalized(const torch::Tensor& x);

    /// Full generator pass. `injected_eps` replaces the random draw.
    torch::Tensor generate(const torch::Tensor& x, const torch::Tensor& ages, LatentState& state,
                           torch::Generator* gen, const std::optional<torch::Tensor>& injected_eps = std::nullopt);

    InputBlock ib{nullptr};
    std::array<EncoderBlock, 6> eb{nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
    torch::nn::Linear head_mu{nullptr}, head_log_sigma{nullptr};
    LabelEncoder label{nullptr};
    torch::Tensor latent_scale;  // per-dimension weights applied to z, initialized to ones
    torch::nn::Linear project{nullptr};
    // dec[0] = DB7 ... dec[5] = DB2 (upsampling), dec[6] = DB1 (full resolution).
    std::array<DecoderBlock, 7> dec{nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
    torch::nn::Conv2d to_rgb{nullptr};
    Discriminator disc{nullptr};

private:
    FgcNetConfig config_;
};
TORCH_MODULE(FgcNet);

FgcNet build_fgcnet(const FgcNetConfig& config);

/// mu_l = mu0 + mu1, sigma_m = sigma0 * sigma1 (elementwise).
Moments fuse_condition(const torch::Tensor& mu0, const torch::Tensor& sigma0, const torch::Tensor& mu1,
                       const torch::Tensor& sigma1);

/// z from fused moments and a given epsilon (sigma clamped to `sigma_floor`).
torch::Tensor latent_from_epsilon(const torch::Tensor& mu_l, const torch::Tensor& sigma_m, const torch::Tensor& eps,
                                  EpsVariant variant, double sigma_floor = 1e-6);

/// Draws epsilon (paper variant: |N(label_mu, label_sigma)|) and returns {z, eps}.
std::pair<torch::Tensor, torch::Tensor> sample_latent(const torch::Tensor& mu_l, const torch::Tensor& sigma_m,
                                                      const Moments& label, EpsVariant variant, torch::Generator& gen,
                                                      double sigma_floor = 1e-6);

/// One image, several target ages; one encode shared by all ages. The draw
/// for each age is seeded from (seed, age), so repeated ages reproduce.
std::vector<ImageTensor> generate_progression(FgcNet& net, const ImageTensor& image, const std::vector<double>& ages,
                                              std::uint64_t seed);

/// Predicted age in years for one image, eval mode.
double discriminate(FgcNet& net, const ImageTensor& image);

struct FgcLossTerms {
    torch::Tensor recon_l1;
    torch::Tensor disc_l2;
    torch::Tensor kl;
    torch::Tensor total;
    torch::Tensor generated;
};

/// TLF-FGC for a batch. L1: mean |X - Y|. L2: mean of the discriminator's
/// age MSE on real and generated images (normalized units). KL: fused moments.
FgcLossTerms fgc_objective(FgcNet& net, const torch::Tensor& images, const torch::Tensor& ages, torch::Generator* gen,
                           const std::optional<torch::Tensor>& injected_eps = std::nullopt);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace fundus

#endif
