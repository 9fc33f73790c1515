#include "fundus/fgcnet.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <bit>

#include "fundus/config.hpp"
#include "fundus/error.hpp"

namespace fundus {

namespace nn = torch::nn;

std::string to_string(EpsVariant v) { return v == EpsVariant::Standard ? "standard" : "paper"; }

EpsVariant parse_eps_variant(const std::string& text) {
    if (text == "standard") return EpsVariant::Standard;
    if (text == "paper") return EpsVariant::Paper;
    fail(ErrorKind::InvalidConfig, "eps variant must be 'standard' or 'paper', got '" + text + "'");
}

void FgcNetConfig::validate() const {
    if (input_size < 64 || input_size % 64 != 0) {
        fail(ErrorKind::InvalidConfig, "fgcnet.input_size must be a positive multiple of 64, got " +
                                           std::to_string(input_size));
    }
    if (latent_dim < 1) fail(ErrorKind::InvalidConfig, "fgcnet.latent_dim must be at least 1");
    if (stem_filters < 1 || disc_filters < 1 || label_hidden < 1 || max_filters < 0) {
        fail(ErrorKind::InvalidConfig, "fgcnet filter counts must be positive");
    }
    if (output_activation != "sigmoid") fail(ErrorKind::InvalidConfig, "fgcnet.output_activation must be 'sigmoid'");
    for (const auto s : disc_fc) {
        if (s < 1) fail(ErrorKind::InvalidConfig, "fgcnet.disc_fc sizes must be positive");
    }
    for (const double r : disc_dropout) {
        if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::InvalidConfig, "fgcnet.disc_dropout rates must lie in [0,1)");
    }
    if (!(age_norm > 0.0)) fail(ErrorKind::InvalidConfig, "fgcnet.age_norm must be positive");
    if (!(sigma_floor > 0.0)) fail(ErrorKind::InvalidConfig, "fgcnet.sigma_floor must be positive");
}

std::int64_t FgcNetConfig::channels(int level) const {
    const std::int64_t c = stem_filters << level;
    return max_filters > 0 ? std::min(c, max_filters) : c;
}

std::int64_t FgcNetConfig::disc_channels(int level) const {
    const std::int64_t c = disc_filters << level;
    return max_filters > 0 ? std::min(c, max_filters) : c;
}

FgcNetConfig FgcNetConfig::from_config(const Config& c) {
    FgcNetConfig f;
    f.input_size = c.get_int("fgcnet.input_size", f.input_size);
    f.stem_filters = c.get_int("fgcnet.stem_filters", f.stem_filters);
    f.latent_dim = c.get_int("fgcnet.latent_dim", f.latent_dim);
    f.eps_variant = parse_eps_variant(c.get_string("fgcnet.eps_variant", to_string(f.eps_variant)));
    // loss.kl_variant is the documented key; fgcnet.kl_variant is accepted as an alias.
    f.kl_variant = parse_kl_variant(c.get_string("loss.kl_variant", c.get_string("fgcnet.kl_variant", to_string(f.kl_variant))));
    f.output_activation = c.get_string("fgcnet.output_activation", f.output_activation);
    f.max_filters = c.get_int("fgcnet.max_filters", f.max_filters);
    f.label_hidden = c.get_int("fgcnet.label_hidden", f.label_hidden);
    f.disc_filters = c.get_int("fgcnet.disc_filters", f.disc_filters);
    f.age_norm = c.get_double("fgcnet.age_norm", f.age_norm);
    f.use_skips = c.get_bool("fgcnet.use_skips", f.use_skips);
    f.sigma_floor = c.get_double("fgcnet.sigma_floor", f.sigma_floor);
    const auto fc = c.get_ints("fgcnet.disc_fc", {f.disc_fc.begin(), f.disc_fc.end()});
    const auto dr = c.get_doubles("fgcnet.disc_dropout", {f.disc_dropout.begin(), f.disc_dropout.end()});
    if (fc.size() != 3 || dr.size() != 3) {
        fail(ErrorKind::InvalidConfig, "fgcnet.disc_fc and fgcnet.disc_dropout take exactly three values");
    }
    std::copy(fc.begin(), fc.end(), f.disc_fc.begin());
    std::copy(dr.begin(), dr.end(), f.disc_dropout.begin());
    f.validate();
    return f;
}

void FgcNetConfig::to_config(Config& c) const {
    c.set("fgcnet.input_size", std::to_string(input_size));
    c.set("fgcnet.stem_filters", std::to_string(stem_filters));
    c.set("fgcnet.latent_dim", std::to_string(latent_dim));
    c.set("fgcnet.eps_variant", to_string(eps_variant));
    c.set("loss.kl_variant", to_string(kl_variant));
    c.set("fgcnet.output_activation", output_activation);
    c.set("fgcnet.max_filters", std::to_string(max_filters));
    c.set("fgcnet.label_hidden", std::to_string(label_hidden));
    c.set("fgcnet.disc_filters", std::to_string(disc_filters));
    c.set("fgcnet.age_norm", format_real(age_norm));
    c.set("fgcnet.use_skips", use_skips ? "true" : "false");
    c.set("fgcnet.sigma_floor", format_real(sigma_floor));
    c.set("fgcnet.disc_fc", format_list(std::vector<long long>(disc_fc.begin(), disc_fc.end())));
    c.set("fgcnet.disc_dropout", format_list(std::vector<double>(disc_dropout.begin(), disc_dropout.end())));
}

SkipSet SkipSet::zeros_like() const {
    SkipSet out;
    for (const auto& m : maps) out.maps.push_back(torch::zeros_like(m));
    return out;
}

InputBlockImpl::InputBlockImpl(std::int64_t filters) {
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(3, filters, 3).padding(1)));
    const std::array<std::int64_t, 4> kernels{1, 3, 5, 7};
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        branches[i] = register_module("branch" + std::to_string(kernels[i]),
                                      nn::Conv2d(nn::Conv2dOptions(filters, filters, kernels[i]).padding(kernels[i] / 2)));
    }
}

torch::Tensor InputBlockImpl::forward(const torch::Tensor& x) {
    const auto s = torch::relu(stem(x));
    return branches[0](s) + branches[1](s) + branches[2](s) + branches[3](s);
}

EncoderBlockImpl::EncoderBlockImpl(std::int64_t in_channels, std::int64_t out_channels) {
    strided = register_module("strided", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).stride(2).padding(1)));
    normal = register_module("normal", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)));
    bn = register_module("bn", nn::BatchNorm2d(out_channels));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) { return torch::relu(bn(normal(strided(x)))); }

DecoderBlockImpl::DecoderBlockImpl(std::int64_t in_channels, std::int64_t out_channels, bool upsample) {
    if (upsample) {
        up = register_module(
            "up", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in_channels, out_channels, 4).stride(2).padding(1).bias(false)));
    } else {
        same = register_module("same", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1).bias(false)));
    }
    bn = register_module("bn", nn::BatchNorm2d(out_channels));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x) {
    return torch::relu(bn(up ? up(x) : same(x)));
}

LabelEncoderImpl::LabelEncoderImpl(std::int64_t hidden, std::int64_t latent_dim, double age_norm) : age_norm_(age_norm) {
    fc1 = register_module("fc1", nn::Linear(1, hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, hidden));
    mu = register_module("mu", nn::Linear(hidden, latent_dim));
    log_sigma = register_module("log_sigma", nn::Linear(hidden, latent_dim));
}

Moments LabelEncoderImpl::forward(const torch::Tensor& ages) {
    auto h = (ages / age_norm_).unsqueeze(1);
    h = torch::relu(fc2(torch::relu(fc1(h))));
    return {mu(h), torch::exp(log_sigma(h).clamp(-10.0, 10.0))};
}

DiscriminatorImpl::DiscriminatorImpl(const FgcNetConfig& c) {
    blocks = nn::Sequential();
    std::int64_t in = 3;
    for (int l = 0; l < 6; ++l) {
        const auto out_c = c.disc_channels(l);
        blocks->push_back(nn::Conv2d(nn::Conv2dOptions(in, out_c, 3).stride(2).padding(1).bias(false)));
        blocks->push_back(nn::BatchNorm2d(out_c));
        blocks->push_back(nn::ReLU());
        in = out_c;
    }
    register_module("blocks", blocks);
    const auto side = c.bottleneck_side();
    fc1 = register_module("fc1", nn::Linear(in * side * side, c.disc_fc[0]));
    fc2 = register_module("fc2", nn::Linear(c.disc_fc[0], c.disc_fc[1]));
    fc3 = register_module("fc3", nn::Linear(c.disc_fc[1], c.disc_fc[2]));
    drop1 = register_module("drop1", nn::Dropout(c.disc_dropout[0]));
    drop2 = register_module("drop2", nn::Dropout(c.disc_dropout[1]));
    drop3 = register_module("drop3", nn::Dropout(c.disc_dropout[2]));
    out = register_module("out", nn::Linear(c.disc_fc[2], 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = blocks->forward(x).flatten(1);
    h = drop1(torch::relu(fc1(h)));
    h = drop2(torch::relu(fc2(h)));
    h = drop3(torch::relu(fc3(h)));
    return out(h).squeeze(1);
}

FgcNetImpl::FgcNetImpl(const FgcNetConfig& config) : config_(config) {
    config_.validate();
    const auto& c = config_;
    ib = register_module("ib", InputBlock(c.channels(0)));
    for (int l = 0; l < 6; ++l) {
        eb[l] = register_module("eb" + std::to_string(l + 1), EncoderBlock(c.channels(l), c.channels(l + 1)));
    }
    const auto side = c.bottleneck_side();
    const auto flat = c.channels(6) * side * side;
    head_mu = register_module("head_mu", nn::Linear(flat, c.latent_dim));
    head_log_sigma = register_module("head_log_sigma", nn::Linear(flat, c.latent_dim));
    label = register_module("label", LabelEncoder(c.label_hidden, c.latent_dim, c.age_norm));
    latent_scale = register_parameter("latent_scale", torch::ones({c.latent_dim}));
    project = register_module("project", nn::Linear(c.latent_dim, flat));
    for (int i = 0; i < 6; ++i) {
        // dec[i] is DB(7 - i): level 6 - i -> level 5 - i.
        dec[i] = register_module("db" + std::to_string(7 - i), DecoderBlock(c.channels(6 - i), c.channels(5 - i), true));
    }
    dec[6] = register_module("db1", DecoderBlock(c.channels(0), c.channels(0), false));
    to_rgb = register_module("to_rgb", nn::Conv2d(nn::Conv2dOptions(c.channels(0), 3, 1)));
    disc = register_module("disc", Discriminator(c));
}

torch::Tensor FgcNetImpl::input_block(const torch::Tensor& x) {
    const auto n = config_.input_size;
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != n || x.size(3) != n) {
        fail(ErrorKind::InvalidInput,
             "FGC-Net expects input [N, 3, " + std::to_string(n) + ", " + std::to_string(n) + "]");
    }
    return ib(x);
}

Encoded FgcNetImpl::encode_image(const torch::Tensor& x) {
    Encoded e;
    auto h = input_block(x);
    e.skips.maps.push_back(h);
    for (auto& block : eb) {
        h = block(h);
        e.skips.maps.push_back(h);
    }
    e.bottleneck = h;
    return e;
}

Moments FgcNetImpl::image_moments(const torch::Tensor& bottleneck) {
    const auto flat = bottleneck.flatten(1);
    return {head_mu(flat), torch::exp(head_log_sigma(flat).clamp(-10.0, 10.0))};
}

Moments FgcNetImpl::encode_label(const torch::Tensor& ages) {
    if (ages.dim() != 1) fail(ErrorKind::InvalidInput, "ages must be a 1-D tensor");
    if (ages.numel() == 0) fail(ErrorKind::InvalidInput, "ages must be nonempty");
    const double lo = ages.min().item<double>();
    const double hi = ages.max().item<double>();
    if (!(lo >= 1.0 && hi <= 120.0)) {
        fail(ErrorKind::InvalidInput, "age condition must lie in [1, 120] years");
    }
    return label(ages.to(latent_scale.scalar_type()));
}

torch::Tensor FgcNetImpl::decode(const torch::Tensor& z, const SkipSet& skips) {
    if (z.dim() != 2 || z.size(1) != config_.latent_dim) {
        fail(ErrorKind::InvalidInput, "z must have shape [N, " + std::to_string(config_.latent_dim) + "]");
    }
    if (config_.use_skips && !skips.complete()) {
        fail(ErrorKind::InvalidState, "skip set has " + std::to_string(skips.maps.size()) + " of 7 entries");
    }
    const auto side = config_.bottleneck_side();
    auto h = project(z * latent_scale).view({z.size(0), config_.channels(6), side, side});
    auto merge = [&](torch::Tensor t, int level) { return config_.use_skips ? t + skips.maps[level] : t; };
    h = merge(h, 6);
    for (int i = 0; i < 5; ++i) h = merge(dec[i](h), 5 - i);
    h = dec[5](h);
    h = merge(dec[6](h), 0);
    return torch::sigmoid(to_rgb(h));
}

torch::Tensor FgcNetImpl::discriminate_normalized(const torch::Tensor& x) { return disc(x); }

torch::Tensor FgcNetImpl::generate(const torch::Tensor& x, const torch::Tensor& ages, LatentState& state,
                                   torch::Generator* gen, const std::optional<torch::Tensor>& injected_eps) {
    auto encoded = encode_image(x);
    const auto image = image_moments(encoded.bottleneck);
    const auto cond = encode_label(ages);
    const auto fused = fuse_condition(image.mu, image.sigma, cond.mu, cond.sigma);
    state.mu0 = image.mu;
    state.sigma0 = image.sigma;
    state.mu1 = cond.mu;
    state.sigma1 = cond.sigma;
    state.mu_l = fused.mu;
    state.sigma_m = fused.sigma;
    state.age_condition = ages;
    if (injected_eps) {
        state.epsilon = *injected_eps;
        state.z = latent_from_epsilon(fused.mu, fused.sigma, *injected_eps, config_.eps_variant, config_.sigma_floor);
    } else {
        if (!gen) fail(ErrorKind::InvalidState, "sampling requires a generator or an injected epsilon");
        std::tie(state.z, state.epsilon) =
            sample_latent(fused.mu, fused.sigma, cond, config_.eps_variant, *gen, config_.sigma_floor);
    }
    return decode(state.z, encoded.skips);
}

FgcNet build_fgcnet(const FgcNetConfig& config) { return FgcNet(config); }

Moments fuse_condition(const torch::Tensor& mu0, const torch::Tensor& sigma0, const torch::Tensor& mu1,
                       const torch::Tensor& sigma1) {
    if (!mu0.sizes().equals(sigma0.sizes()) || !mu1.sizes().equals(sigma1.sizes()) ||
        !mu0.sizes().equals(mu1.sizes())) {
        fail(ErrorKind::InvalidInput, "image and label moments must have matching shapes");
    }
    return {mu0 + mu1, sigma0 * sigma1};
}

torch::Tensor latent_from_epsilon(const torch::Tensor& mu_l, const torch::Tensor& sigma_m, const torch::Tensor& eps,
                                  EpsVariant variant, double sigma_floor) {
    if (!mu_l.sizes().equals(sigma_m.sizes()) || !mu_l.sizes().equals(eps.sizes())) {
        fail(ErrorKind::InvalidInput, "mu, sigma and epsilon must have matching shapes");
    }
    if ((sigma_m < 0).any().item<bool>()) fail(ErrorKind::InvalidInput, "sigma must be nonnegative");
    const auto sigma = sigma_m.clamp_min(sigma_floor);
    return variant == EpsVariant::Standard ? mu_l + sigma * eps : mu_l + sigma.pow(2) * eps;
}

std::pair<torch::Tensor, torch::Tensor> sample_latent(const torch::Tensor& mu_l, const torch::Tensor& sigma_m,
                                                      const Moments& label, EpsVariant variant, torch::Generator& gen,
                                                      double sigma_floor) {
    const auto noise = torch::randn(mu_l.sizes(), gen, mu_l.options().requires_grad(false));
    torch::Tensor eps;
    if (variant == EpsVariant::Standard) {
        eps = noise;
    } else {
        if (!label.mu.sizes().equals(mu_l.sizes()) || !label.sigma.sizes().equals(mu_l.sizes())) {
            fail(ErrorKind::InvalidInput, "label moments must match the latent shape");
        }
        eps = (label.mu + label.sigma * noise).abs();
    }
    return {latent_from_epsilon(mu_l, sigma_m, eps, variant, sigma_floor), eps};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer over the combined words.
    std::uint64_t x = seed ^ (salt + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<ImageTensor> generate_progression(FgcNet& net, const ImageTensor& image, const std::vector<double>& ages,
                                              std::uint64_t seed) {
    if (ages.empty()) fail(ErrorKind::InvalidInput, "age list is empty");
    for (const double a : ages) {
        if (!(a >= 1.0 && a <= 120.0)) fail(ErrorKind::InvalidInput, "age condition must lie in [1, 120] years");
    }
    const auto n = net->config().input_size;
    if (image.height() != n || image.width() != n) {
        fail(ErrorKind::InvalidInput, "image must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    net->eval();
    torch::NoGradGuard no_grad;
    const auto dtype = net->latent_scale.scalar_type();
    const auto x = image.tensor().unsqueeze(0).to(dtype);
    const auto encoded = net->encode_image(x);
    const auto moments = net->image_moments(encoded.bottleneck);

    std::vector<ImageTensor> out;
    out.reserve(ages.size());
    for (const double age : ages) {
        const auto cond = net->encode_label(torch::tensor({age}, torch::TensorOptions().dtype(dtype)));
        const auto fused = fuse_condition(moments.mu, moments.sigma, cond.mu, cond.sigma);
        auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, std::bit_cast<std::uint64_t>(age)));
        const auto [z, eps] = sample_latent(fused.mu, fused.sigma, cond, net->config().eps_variant, gen,
                                            net->config().sigma_floor);
        out.emplace_back(net->decode(z, encoded.skips).squeeze(0));
    }
    return out;
}

double discriminate(FgcNet& net, const ImageTensor& image) {
    const auto n = net->config().input_size;
    if (image.height() != n || image.width() != n) {
        fail(ErrorKind::InvalidInput, "image must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    net->eval();
    torch::NoGradGuard no_grad;
    const auto x = image.tensor().unsqueeze(0).to(net->latent_scale.scalar_type());
    return net->discriminate_normalized(x).item<double>() * net->config().age_norm;
}

FgcLossTerms fgc_objective(FgcNet& net, const torch::Tensor& images, const torch::Tensor& ages, torch::Generator* gen,
                           const std::optional<torch::Tensor>& injected_eps) {
    LatentState state;
    FgcLossTerms t;
    t.generated = net->generate(images, ages, state, gen, injected_eps);
    t.recon_l1 = (images - t.generated).abs().mean();
    const auto target = (ages / net->config().age_norm).to(images.scalar_type());
    const auto real = net->discriminate_normalized(images);
    const auto fake = net->discriminate_normalized(t.generated);
    t.disc_l2 = 0.5 * ((real - target).pow(2).mean() + (fake - target).pow(2).mean());
    t.kl = loss_ops::kl(state.mu_l, state.sigma_m, net->config().kl_variant);
    t.total = loss_ops::tlf_fgc(t.recon_l1, t.disc_l2, t.kl);
    return t;
}

}  // namespace fundus
