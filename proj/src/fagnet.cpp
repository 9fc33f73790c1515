#include "fundus/fagnet.hpp"

#include "fundus/config.hpp"
#include "fundus/error.hpp"

namespace fundus {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(Head h) { return h == Head::Age ? "age" : "gender"; }

Head parse_head(const std::string& text) {
    if (text == "age") return Head::Age;
    if (text == "gender") return Head::Gender;
    fail(ErrorKind::InvalidConfig, "head must be 'age' or 'gender', got '" + text + "'");
}

void FagNetConfig::validate() const {
    if (input_size < 64 || input_size % 64 != 0) {
        fail(ErrorKind::InvalidConfig, "fagnet.input_size must be a positive multiple of 64, got " +
                                           std::to_string(input_size));
    }
    if (base_filters < 1 || tail_filters < 1 || conv_depth < 1) {
        fail(ErrorKind::InvalidConfig, "fagnet filter counts and conv depth must be positive");
    }
    if (attention_kernel < 1 || attention_kernel % 2 == 0) {
        fail(ErrorKind::InvalidConfig, "fagnet.attention_kernel must be odd");
    }
    for (const double r : dropout_rates) {
        if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::InvalidConfig, "fagnet dropout rates must lie in [0,1)");
    }
    for (const auto s : fc_sizes) {
        if (s < 1) fail(ErrorKind::InvalidConfig, "fagnet fully-connected sizes must be positive");
    }
    if (!(age_scale > 0.0)) fail(ErrorKind::InvalidConfig, "fagnet.age_scale must be positive");
}

FagNetConfig FagNetConfig::from_config(const Config& c) {
    FagNetConfig f;
    f.input_size = c.get_int("fagnet.input_size", f.input_size);
    f.base_filters = c.get_int("fagnet.base_filters", f.base_filters);
    f.attention_kernel = c.get_int("fagnet.attention_kernel", f.attention_kernel);
    f.head = parse_head(c.get_string("fagnet.head", to_string(f.head)));
    f.tail_filters = c.get_int("fagnet.tail_filters", f.tail_filters);
    f.conv_depth = c.get_int("fagnet.conv_depth", f.conv_depth);
    f.age_offset = c.get_double("fagnet.age_offset", f.age_offset);
    f.age_scale = c.get_double("fagnet.age_scale", f.age_scale);
    const auto rates = c.get_doubles("fagnet.dropout_rates", {f.dropout_rates.begin(), f.dropout_rates.end()});
    const auto sizes = c.get_ints("fagnet.fc_sizes", {f.fc_sizes.begin(), f.fc_sizes.end()});
    if (rates.size() != 3 || sizes.size() != 3) {
        fail(ErrorKind::InvalidConfig, "fagnet.dropout_rates and fagnet.fc_sizes take exactly three values");
    }
    std::copy(rates.begin(), rates.end(), f.dropout_rates.begin());
    std::copy(sizes.begin(), sizes.end(), f.fc_sizes.begin());
    f.validate();
    return f;
}

void FagNetConfig::to_config(Config& c) const {
    c.set("fagnet.input_size", std::to_string(input_size));
    c.set("fagnet.base_filters", std::to_string(base_filters));
    c.set("fagnet.attention_kernel", std::to_string(attention_kernel));
    c.set("fagnet.head", to_string(head));
    c.set("fagnet.tail_filters", std::to_string(tail_filters));
    c.set("fagnet.conv_depth", std::to_string(conv_depth));
    c.set("fagnet.age_offset", format_real(age_offset));
    c.set("fagnet.age_scale", format_real(age_scale));
    c.set("fagnet.dropout_rates", format_list(std::vector<double>(dropout_rates.begin(), dropout_rates.end())));
    c.set("fagnet.fc_sizes", format_list(std::vector<long long>(fc_sizes.begin(), fc_sizes.end())));
}

SpatialAttentionImpl::SpatialAttentionImpl(std::int64_t kernel) {
    if (kernel < 1 || kernel % 2 == 0) {
        fail(ErrorKind::InvalidConfig, "spatial attention kernel must be odd, got " + std::to_string(kernel));
    }
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(2, 1, kernel).padding(kernel / 2)));
}

torch::Tensor SpatialAttentionImpl::attention_map(const torch::Tensor& x) {
    const auto avg = x.mean(1, /*keepdim=*/true);
    const auto max = std::get<0>(x.max(1, /*keepdim=*/true));
    return torch::sigmoid(conv(torch::cat({avg, max}, 1)));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& x) { return x * attention_map(x); }

FagBlockImpl::FagBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t depth, bool attention,
                           std::int64_t attention_kernel, bool pool)
    : pool_(pool) {
    stack = nn::Sequential();
    std::int64_t c = in_channels;
    for (std::int64_t i = 0; i < depth; ++i) {
        // A conv feeding batch-norm directly has no use for a bias.
        const bool feeds_bn = i + 1 == depth && !attention;
        stack->push_back(nn::Conv2d(nn::Conv2dOptions(c, out_channels, 3).padding(1).bias(!feeds_bn)));
        if (i + 1 < depth) stack->push_back(nn::ReLU());
        c = out_channels;
    }
    register_module("stack", stack);
    if (attention) sab = register_module("sab", SpatialAttention(attention_kernel));
    bn = register_module("bn", nn::BatchNorm2d(out_channels));
}

torch::Tensor FagBlockImpl::forward(torch::Tensor x) {
    x = stack->forward(x);
    if (sab) x = sab(x);
    x = torch::relu(bn(x));
    if (pool_) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    return x;
}

FagNetImpl::FagNetImpl(const FagNetConfig& config) : config_(config) {
    config_.validate();
    const auto b = config_.base_filters;
    const auto k = config_.attention_kernel;
    const auto d = config_.conv_depth;
    block1 = register_module("block1", FagBlock(3, b, d, true, k, false));
    block2 = register_module("block2", FagBlock(b, 2 * b, d, true, k, true));
    cmp_conv = register_module("cmp_conv", nn::Conv2d(nn::Conv2dOptions(b, 2 * b, 1)));
    block3 = register_module("block3", FagBlock(4 * b, 4 * b, d, false, k, true));
    block4 = register_module("block4", FagBlock(4 * b, 8 * b, d, false, k, true));
    block5 = register_module("block5", FagBlock(8 * b, 16 * b, d, false, k, true));
    block6 = register_module("block6", FagBlock(16 * b, 32 * b, d, true, k, true));
    tail_conv = register_module("tail_conv", nn::Conv2d(nn::Conv2dOptions(32 * b, config_.tail_filters, 3).padding(1).bias(false)));
    tail_bn = register_module("tail_bn", nn::BatchNorm2d(config_.tail_filters));

    const auto side = config_.input_size / 64;
    const auto flat = config_.tail_filters * side * side;
    const auto& fc = config_.fc_sizes;
    fc1 = register_module("fc1", nn::Linear(flat, fc[0]));
    fc2 = register_module("fc2", nn::Linear(fc[0], fc[1]));
    fc3 = register_module("fc3", nn::Linear(fc[1], fc[2]));
    drop1 = register_module("drop1", nn::Dropout(config_.dropout_rates[0]));
    drop2 = register_module("drop2", nn::Dropout(config_.dropout_rates[1]));
    drop3 = register_module("drop3", nn::Dropout(config_.dropout_rates[2]));
    out = register_module("out", nn::Linear(fc[2], config_.head == Head::Age ? 1 : 2));
}

torch::Tensor FagNetImpl::logits(const torch::Tensor& x, std::vector<std::int64_t>* trace) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != config_.input_size || x.size(3) != config_.input_size) {
        fail(ErrorKind::InvalidInput, "FAG-Net expects input [N, 3, " + std::to_string(config_.input_size) + ", " +
                                          std::to_string(config_.input_size) + "]");
    }
    auto record = [&](const torch::Tensor& t) {
        if (trace) trace->push_back(t.size(2));
    };
    auto h1 = block1(x);
    record(h1);
    auto h2 = block2(h1);
    record(h2);
    // CMP shortcut: 1x1 conv + maxpool on block1 output, concatenated on channels.
    auto shortcut = F::max_pool2d(cmp_conv(h1), F::MaxPool2dFuncOptions(2));
    auto h = torch::cat({h2, shortcut}, 1);
    for (auto* block : {&block3, &block4, &block5, &block6}) {
        h = (*block)(h);
        record(h);
    }
    h = F::max_pool2d(torch::relu(tail_bn(tail_conv(h))), F::MaxPool2dFuncOptions(2));
    record(h);

    h = h.flatten(1);
    h = drop1(torch::relu(fc1(h)));
    h = drop2(torch::relu(fc2(h)));
    h = drop3(torch::relu(fc3(h)));
    h = out(h);
    return config_.head == Head::Age ? h.squeeze(1) : h;
}

torch::Tensor FagNetImpl::forward(const torch::Tensor& x) {
    const auto raw = logits(x);
    if (config_.head == Head::Gender) return torch::softmax(raw, 1);
    return config_.age_offset + config_.age_scale * raw;
}

torch::Tensor spatial_attention(const torch::Tensor& features, std::int64_t kernel) {
    SpatialAttention sab(kernel);
    sab->to(features.scalar_type());
    return sab(features);
}

FagNet build_fagnet(const FagNetConfig& config) { return FagNet(config); }

torch::Tensor fagnet_forward(FagNet& net, const std::vector<ImageTensor>& images, Mode mode,
                             std::optional<std::uint64_t> dropout_seed) {
    if (images.empty()) fail(ErrorKind::InvalidInput, "FAG-Net forward needs a nonempty batch");
    const auto size = net->config().input_size;
    for (const auto& im : images) {
        if (im.height() != size || im.width() != size) {
            fail(ErrorKind::InvalidInput, "image is " + std::to_string(im.height()) + "x" + std::to_string(im.width()) +
                                              ", network expects " + std::to_string(size));
        }
    }
    auto x = stack_images(images);
    x = x.to(net->parameters().front().scalar_type());
    if (mode == Mode::Eval) {
        net->eval();
        torch::NoGradGuard no_grad;
        return net->forward(x);
    }
    if (dropout_seed) torch::manual_seed(*dropout_seed);
    net->train();
    return net->forward(x);
}

}  // namespace fundus
