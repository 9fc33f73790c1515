#include "torch_doctest.hpp"

#include "fundus/config.hpp"
#include "fundus/checkpoint.hpp"
#include "fundus/error.hpp"
#include "fundus/fagnet.hpp"
#include "fundus/losses.hpp"

using namespace fundus;

namespace {

FagNetConfig small_config(Head head = Head::Age) {
    FagNetConfig c;
    c.input_size = 64;
    c.base_filters = 4;
    c.tail_filters = 32;
    c.fc_sizes = {32, 16, 8};
    c.head = head;
    return c;
}

std::vector<ImageTensor> random_images(int n, std::int64_t size) {
    std::vector<ImageTensor> out;
    for (int i = 0; i < n; ++i) out.emplace_back(torch::rand({3, size, size}));
    return out;
}

}  // namespace

TEST_CASE("spatial attention preserves shape and gates into (0,1)") {
    torch::manual_seed(0);
    const auto x = torch::randn({1, 32, 64, 64});
    CHECK(spatial_attention(x, 5).sizes() == x.sizes());

    SpatialAttention sab(5);
    const auto map = sab->attention_map(x);
    CHECK(map.sizes() == std::vector<std::int64_t>{1, 1, 64, 64});
    CHECK(map.gt(0).all().item<bool>());
    CHECK(map.lt(1).all().item<bool>());
}

TEST_CASE("zero-initialized attention halves the input") {
    SpatialAttention sab(5);
    {
        torch::NoGradGuard g;
        sab->conv->weight.zero_();
        sab->conv->bias.zero_();
    }
    const auto x = torch::randn({2, 8, 16, 16});
    CHECK(torch::allclose(sab(x), 0.5 * x, 0.0, 0.0));
}

TEST_CASE("spatial attention never increases the L-infinity norm") {
    torch::manual_seed(3);
    for (int t = 0; t < 20; ++t) {
        const auto x = torch::randn({2, 6, 12, 12}) * (t + 1);
        const auto y = spatial_attention(x, 3);
        CHECK(y.abs().max().item<double>() <= x.abs().max().item<double>());
    }
}

TEST_CASE("even attention kernels are a config error") {
    try {
        SpatialAttention sab(4);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidConfig);
    }
    auto c = small_config();
    c.attention_kernel = 6;
    CHECK_THROWS_AS(build_fagnet(c), Error);
}

TEST_CASE("config validation") {
    auto c = small_config();
    c.input_size = 100;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.dropout_rates = {0.9, 1.0, 0.5};
    CHECK_THROWS_AS(c.validate(), Error);

    Config file;
    small_config(Head::Gender).to_config(file);
    const auto back = FagNetConfig::from_config(file);
    CHECK(back.input_size == 64);
    CHECK(back.head == Head::Gender);
    CHECK(back.dropout_rates == std::array<double, 3>{0.9, 0.8, 0.5});
    CHECK(back.fc_sizes == std::array<std::int64_t, 3>{32, 16, 8});
}

TEST_CASE("age head emits one scalar per image") {
    torch::manual_seed(1);
    auto net = build_fagnet(small_config());
    const auto out = fagnet_forward(net, random_images(16, 64), Mode::Eval);
    CHECK(out.sizes() == std::vector<std::int64_t>{16});
    CHECK(torch::isfinite(out).all().item<bool>());
}

TEST_CASE("gender head emits normalized probabilities") {
    torch::manual_seed(2);
    auto net = build_fagnet(small_config(Head::Gender));
    const auto probs = fagnet_forward(net, random_images(5, 64), Mode::Eval);
    REQUIRE(probs.sizes() == std::vector<std::int64_t>{5, 2});
    CHECK((probs.sum(1) - 1.0).abs().max().item<double>() <= 1e-6);
    CHECK(probs.ge(0).all().item<bool>());
    CHECK(probs.le(1).all().item<bool>());
}

TEST_CASE("downsampling schedule halves six times") {
    torch::manual_seed(4);
    auto net = build_fagnet(small_config());
    net->eval();
    std::vector<std::int64_t> trace;
    torch::NoGradGuard g;
    net->logits(torch::rand({1, 3, 64, 64}), &trace);
    CHECK(trace == std::vector<std::int64_t>{64, 32, 16, 8, 4, 2, 1});
}

TEST_CASE("parameter inventory is a deterministic function of the config") {
    auto a = build_fagnet(small_config());
    auto b = build_fagnet(small_config());
    CHECK(shape_inventory(*a) == shape_inventory(*b));
    auto g = build_fagnet(small_config(Head::Gender));
    CHECK(shape_inventory(*a) != shape_inventory(*g));
}

TEST_CASE("eval mode is deterministic and batch independent") {
    torch::manual_seed(5);
    auto net = build_fagnet(small_config());
    const auto images = random_images(16, 64);
    const auto first = fagnet_forward(net, images, Mode::Eval);
    const auto second = fagnet_forward(net, images, Mode::Eval);
    CHECK(torch::equal(first, second));

    const auto single = fagnet_forward(net, {images[7]}, Mode::Eval);
    CHECK(std::abs(single[0].item<double>() - first[7].item<double>()) <= 1e-5);
}

TEST_CASE("train mode dropout is reproducible under a seed") {
    torch::manual_seed(6);
    auto net = build_fagnet(small_config());
    const auto images = random_images(4, 64);
    const auto a = fagnet_forward(net, images, Mode::Train, 99).detach();
    const auto b = fagnet_forward(net, images, Mode::Train, 99).detach();
    CHECK(torch::equal(a, b));
}

TEST_CASE("forward rejects mismatched images") {
    auto net = build_fagnet(small_config());
    try {
        fagnet_forward(net, random_images(2, 128), Mode::Eval);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidInput);
    }
    CHECK_THROWS_AS(fagnet_forward(net, {}, Mode::Eval), Error);
}

TEST_CASE("every parameter receives an ALF gradient, CMP included") {
    torch::manual_seed(7);
    auto net = build_fagnet(small_config());
    net->train();
    const auto x = torch::rand({6, 3, 64, 64});
    const auto ages = torch::tensor({12.0, 25.0, 33.0, 47.0, 58.0, 71.0});
    loss_ops::alf(ages, net->forward(x), ClfParams{}).backward();
    for (const auto& p : net->named_parameters()) {
        CAPTURE(p.key());
        REQUIRE(p.value().grad().defined());
        CHECK(p.value().grad().abs().sum().item<double>() > 0.0);
    }
}

TEST_CASE("a few Adam steps reduce ALF on a fixed batch") {
    torch::manual_seed(8);
    auto net = build_fagnet(small_config());
    const auto x = torch::rand({8, 3, 64, 64});
    const auto ages = torch::tensor({15.0, 22.0, 31.0, 40.0, 49.0, 57.0, 66.0, 74.0});
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
    auto eval_alf = [&] {
        net->eval();
        torch::NoGradGuard g;
        return loss_ops::alf(ages, net->forward(x), ClfParams{}).item<double>();
    };
    const double before = eval_alf();
    for (int step = 0; step < 60; ++step) {
        net->train();
        opt.zero_grad();
        loss_ops::alf(ages, net->forward(x), ClfParams{}).backward();
        opt.step();
    }
    CHECK(eval_alf() < before);
}
