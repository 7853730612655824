#pragma once

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
//   p <- p - lr * ( mhat / (sqrt(vhat) + eps) + wd * p )
// where mhat/vhat are bias-corrected by 1-b^t. Weight decay multiplies the
// parameter directly and is not folded into the gradient.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "priorlens/common.hpp"
#include "priorlens/tensor.hpp"

namespace priorlens {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class AdamWT {
 public:
  using Param = std::pair<std::string, TensorT<S>>;

  AdamWT(std::vector<Param> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (params_.empty()) throw UsageError("AdamW: no parameters");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& [name, p] : params_) {
      if (!p.requires_grad())
        throw UsageError(cat("AdamW: parameter '", name, "' is not trainable"));
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  // One update over all parameters; throws if any parameter has no gradient.
  void step() {
    for (auto& [name, p] : params_)
      if (!p.has_grad())
        throw UsageError(cat("AdamW: parameter '", name, "' has no gradient; did backward run?"));
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      S* w = p.mutable_data().data();
      const S* g = p.grad().data();
      S* m = m_[k].data();
      S* v = v_[k].data();
      const int64_t n = p.numel();
      for (int64_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        const double wi = static_cast<double>(w[i]);
        w[i] = static_cast<S>(wi - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                              cfg_.weight_decay * wi));
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Param>& params() const { return params_; }

 private:
  std::vector<Param> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace priorlens
