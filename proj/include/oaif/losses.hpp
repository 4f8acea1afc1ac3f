#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "oaif/checkpoint.hpp"
#include "oaif/policy.hpp"
#include "oaif/vocab.hpp"

namespace oaif {

enum class LossVariant { kDpo, kIpo, kSlic };

struct LossKind {
  LossVariant variant = LossVariant::kDpo;
  double beta = 0.1;

  LossKind() = default;
  LossKind(LossVariant v, double b) : variant(v), beta(b) {
    if (beta <= 0.0) throw std::invalid_argument("LossKind: beta must be > 0");
  }
};

inline std::string loss_name(LossVariant v) {
  switch (v) {
    case LossVariant::kDpo: return "dpo";
    case LossVariant::kIpo: return "ipo";
    case LossVariant::kSlic: return "slic";
  }
  return "?";
}

inline LossVariant loss_from_name(const std::string& name) {
  if (name == "dpo") return LossVariant::kDpo;
  if (name == "ipo") return LossVariant::kIpo;
  if (name == "slic") return LossVariant::kSlic;
  throw std::invalid_argument("unknown loss name: " + name);
}

/// The scalar log-ratio margin shared by all three losses, with the four
/// constituent sequence log-probabilities retained for diagnostics.
struct PairMargin {
  double h = 0.0;
  double logprob_plus = 0.0;       // log pi_theta(y+ | x)
  double logprob_minus = 0.0;      // log pi_theta(y- | x)
  double ref_logprob_plus = 0.0;   // log pi_theta0(y+ | x)
  double ref_logprob_minus = 0.0;  // log pi_theta0(y- | x)
};

inline PairMargin margin(const PolicyParams& theta, const PolicySnapshot& theta0,
                         const TokenSeq& x, const TokenSeq& y_plus,
                         const TokenSeq& y_minus) {
  if (y_plus == y_minus) {
    throw std::invalid_argument("margin: identical responses carry no signal");
  }
  PairMargin m;
  m.logprob_plus = sequence_logprob(theta, x, y_plus);
  m.logprob_minus = sequence_logprob(theta, x, y_minus);
  m.ref_logprob_plus = sequence_logprob(theta0.params, x, y_plus);
  m.ref_logprob_minus = sequence_logprob(theta0.params, x, y_minus);
  m.h = (m.logprob_plus - m.logprob_minus) -
        (m.ref_logprob_plus - m.ref_logprob_minus);
  return m;
}

/// Numerically stable log(1 + e^x).
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double loss(const LossKind& kind, double h) {
  switch (kind.variant) {
    case LossVariant::kDpo:
      // -log sigma(beta * h), evaluated as softplus(-beta * h).
      return softplus(-kind.beta * h);
    case LossVariant::kIpo: {
      const double d = h - 1.0 / (2.0 * kind.beta);
      return d * d;
    }
    case LossVariant::kSlic:
      return std::max(0.0, 1.0 - kind.beta * h);
  }
  return 0.0;
}

/// Derivative of loss with respect to the margin h. At the SLiC kink
/// (h == 1/beta) the subgradient 0 is used.
inline double dloss_dh(const LossKind& kind, double h) {
  switch (kind.variant) {
    case LossVariant::kDpo:
      return -kind.beta * sigmoid(-kind.beta * h);
    case LossVariant::kIpo:
      return 2.0 * (h - 1.0 / (2.0 * kind.beta));
    case LossVariant::kSlic:
      return h < 1.0 / kind.beta ? -kind.beta : 0.0;
  }
  return 0.0;
}

/// Chain-rule assembly of the parameter gradient of the pair loss:
/// dloss_dh(h) * [grad log pi(y+) - grad log pi(y-)]. The reference policy
/// contributes constants only.
inline SparseGrad pair_loss_gradient(const LossKind& kind, const PolicyParams& theta,
                                     const PolicySnapshot& theta0, const TokenSeq& x,
                                     const TokenSeq& y_plus, const TokenSeq& y_minus) {
  const PairMargin m = margin(theta, theta0, x, y_plus, y_minus);
  const double scale = dloss_dh(kind, m.h);
  SparseGrad grad;
  grad.axpy(scale, logprob_gradient(theta, x, y_plus));
  grad.axpy(-scale, logprob_gradient(theta, x, y_minus));
  return grad;
}

}  // namespace oaif
