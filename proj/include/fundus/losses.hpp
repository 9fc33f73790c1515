#ifndef FUNDUS_LOSSES_HPP
#define FUNDUS_LOSSES_HPP

#include <string>
#include <vector>

#include <torch/torch.h>

#include "fundus/metrics.hpp"

namespace fundus {

class Config;

/// Weights of the age-regression objective. `varphi` is the in-range slope
/// and out-of-range offset of CLF, `J` the tolerance window in years, `psi`
/// the shared term weight of ALF.
struct ClfParams {
    double varphi = 0.1;
    int J = 3;
    double psi = 1.0;

    /// Throws on J < 0 or psi < 0; warns if varphi is outside [1e-4, 0.3].
    void validate() const;

    static ClfParams from_config(const Config& config);
    void to_config(Config& config) const;
};

enum class KlVariant {
    Standard,  // 1/2 sum(sigma^2 + mu^2 - 1 - ln sigma^2)
    Paper,     // 1/2 sum(sigma^2 + mu^2 - 1 - exp(sigma^2))
};

std::string to_string(KlVariant v);
KlVariant parse_kl_variant(const std::string& text);

struct LatentMoments {
    std::vector<double> mu;
    std::vector<double> sigma;
};

/// Mean over samples of d*varphi (d <= J) or d^3 + varphi (d > J).
double clf_loss(const EvalBatch& batch, const ClfParams& params);

/// d clf_loss / d predicted_i, analytic. At d == J the left branch is used;
/// at d == 0 the subgradient 0 is returned.
std::vector<double> clf_gradient(const EvalBatch& batch, const ClfParams& params);

/// (psi*L1 + psi*L2 + psi*CLF) / 3 with L1, L2 as mean absolute / squared error.
double alf_loss(const EvalBatch& batch, const ClfParams& params);

double kl_divergence(const LatentMoments& moments, KlVariant variant = KlVariant::Standard);

double tlf_fgc_loss(double recon_l1, double disc_l2, double kl);

// Differentiable counterparts used by the trainers. `actual` and `predicted`
// are 1-D tensors of equal length.
namespace loss_ops {

torch::Tensor clf(const torch::Tensor& actual, const torch::Tensor& predicted, const ClfParams& params);
torch::Tensor alf(const torch::Tensor& actual, const torch::Tensor& predicted, const ClfParams& params);

/// mu, sigma: [N, latent]. Sum over latent dimensions, mean over samples.
torch::Tensor kl(const torch::Tensor& mu, const torch::Tensor& sigma, KlVariant variant);

torch::Tensor tlf_fgc(const torch::Tensor& recon_l1, const torch::Tensor& disc_l2, const torch::Tensor& kl);

}  // namespace loss_ops

}  // namespace fundus

#endif
