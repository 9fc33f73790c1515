#include "fundus/losses.hpp"

#include <cmath>

#include "fundus/config.hpp"
#include "fundus/error.hpp"

namespace fundus {

void ClfParams::validate() const {
    if (J < 0) fail(ErrorKind::InvalidConfig, "loss.J must be nonnegative");
    if (!(psi >= 0.0) || !std::isfinite(psi)) fail(ErrorKind::InvalidConfig, "loss.psi must be finite and nonnegative");
    if (!std::isfinite(varphi)) fail(ErrorKind::InvalidConfig, "loss.varphi must be finite");
    if (varphi < 1e-4 || varphi > 0.3) {
        warn("loss.varphi = " + format_real(varphi) + " lies outside the usual range [0.0001, 0.3]");
    }
}

ClfParams ClfParams::from_config(const Config& config) {
    ClfParams p;
    p.varphi = config.get_double("loss.varphi", p.varphi);
    p.J = static_cast<int>(config.get_int("loss.J", p.J));
    p.psi = config.get_double("loss.psi", p.psi);
    p.validate();
    return p;
}

void ClfParams::to_config(Config& config) const {
    config.set("loss.varphi", format_real(varphi));
    config.set("loss.J", std::to_string(J));
    config.set("loss.psi", format_real(psi));
}

std::string to_string(KlVariant v) { return v == KlVariant::Standard ? "standard" : "paper"; }

KlVariant parse_kl_variant(const std::string& text) {
    if (text == "standard") return KlVariant::Standard;
    if (text == "paper") return KlVariant::Paper;
    fail(ErrorKind::InvalidConfig, "kl variant must be 'standard' or 'paper', got '" + text + "'");
}

double clf_loss(const EvalBatch& batch, const ClfParams& params) {
    params.validate();
    double total = 0.0;
    for (const double d : batch.distances()) {
        total += d <= params.J ? d * params.varphi : d * d * d + params.varphi;
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> clf_gradient(const EvalBatch& batch, const ClfParams& params) {
    params.validate();
    const auto a = batch.actual();
    const auto p = batch.predicted();
    const double n = static_cast<double>(batch.size());
    std::vector<double> g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = p[i] - a[i];
        const double d = std::abs(r);
        const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
        const double slope = d <= params.J ? params.varphi : 3.0 * d * d;
        g[i] = sign * slope / n;
    }
    return g;
}

double alf_loss(const EvalBatch& batch, const ClfParams& params) {
    double l1 = 0.0;
    double l2 = 0.0;
    for (const double d : batch.distances()) {
        l1 += d;
        l2 += d * d;
    }
    const double n = static_cast<double>(batch.size());
    const double clf = clf_loss(batch, params);
    return (params.psi * (l1 / n) + params.psi * (l2 / n) + params.psi * clf) / 3.0;
}

double kl_divergence(const LatentMoments& m, KlVariant variant) {
    if (m.mu.size() != m.sigma.size()) fail(ErrorKind::InvalidInput, "mu and sigma lengths differ");
    if (m.mu.empty()) fail(ErrorKind::InvalidInput, "latent moments are empty");
    double total = 0.0;
    for (std::size_t i = 0; i < m.mu.size(); ++i) {
        const double s = m.sigma[i];
        if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(m.mu[i])) {
            fail(ErrorKind::InvalidInput, "sigma must be positive and finite at dimension " + std::to_string(i));
        }
        const double var = s * s;
        const double last = variant == KlVariant::Standard ? std::log(var) : std::exp(var);
        total += var + m.mu[i] * m.mu[i] - 1.0 - last;
    }
    return 0.5 * total;
}

double tlf_fgc_loss(double recon_l1, double disc_l2, double kl) {
    if (!std::isfinite(recon_l1) || !std::isfinite(disc_l2) || !std::isfinite(kl)) {
        fail(ErrorKind::InvalidInput, "TLF-FGC terms must be finite");
    }
    return (recon_l1 + disc_l2 + kl) / 3.0;
}

namespace loss_ops {

torch::Tensor clf(const torch::Tensor& actual, const torch::Tensor& predicted, const ClfParams& params) {
    const auto d = (actual - predicted).abs();
    const auto inside = d * params.varphi;
    const auto outside = d.pow(3) + params.varphi;
    return torch::where(d <= static_cast<double>(params.J), inside, outside).mean();
}

torch::Tensor alf(const torch::Tensor& actual, const torch::Tensor& predicted, const ClfParams& params) {
    const auto r = actual - predicted;
    const auto l1 = r.abs().mean();
    const auto l2 = r.pow(2).mean();
    return (params.psi * l1 + params.psi * l2 + params.psi * clf(actual, predicted, params)) / 3.0;
}

torch::Tensor kl(const torch::Tensor& mu, const torch::Tensor& sigma, KlVariant variant) {
    const auto var = sigma.pow(2);
    const auto last = variant == KlVariant::Standard ? torch::log(var) : torch::exp(var);
    return (0.5 * (var + mu.pow(2) - 1.0 - last).sum(-1)).mean();
}

torch::Tensor tlf_fgc(const torch::Tensor& recon_l1, const torch::Tensor& disc_l2, const torch::Tensor& kl) {
    return (recon_l1 + disc_l2 + kl) / 3.0;
}

}  // namespace loss_ops

}  // namespace fundus
