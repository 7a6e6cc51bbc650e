#include "parameta/optim.hpp"

#include <cmath>

#include "parameta/errors.hpp"

namespace parameta {

void AdamW::step(std::span<diff::Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::zeros(p->value.shape()));
      v_.push_back(Matrix::zeros(p->value.shape()));
    }
  }
  if (m_.size() != params.size()) {
    throw DimensionError("optimizer tracks " + std::to_string(m_.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  ++t_;
  const double lr = cfg_.learning_rate;
  const double decay = 1.0 - lr * cfg_.weight_decay;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    diff::Parameter& p = *params[k];
    if (p.value.size() != m_[k].size()) throw DimensionError("optimizer state shape mismatch for " + p.name);
    auto& w = p.value.data();
    const auto& g = p.grad.data();
    auto& m = m_[k].data();
    auto& v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (p.decay) w[i] *= decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

nlohmann::json AdamW::to_json() const {
  nlohmann::json moments = nlohmann::json::array();
  for (std::size_t k = 0; k < m_.size(); ++k) moments.push_back({{"m", m_[k].data()}, {"v", v_[k].data()}});
  return {{"t", t_}, {"moments", moments}};
}

AdamW AdamW::from_json(const nlohmann::json& j, AdamWConfig cfg) {
  AdamW opt(cfg);
  opt.t_ = j.at("t").get<std::size_t>();
  for (const auto& e : j.at("moments")) {
    auto m = e.at("m").get<std::vector<real>>();
    auto v = e.at("v").get<std::vector<real>>();
    if (m.size() != v.size()) throw ParseError("optimizer moments have mismatched sizes");
    const std::size_t n = m.size();
    opt.m_.emplace_back(1, n, std::move(m));
    opt.v_.emplace_back(1, n, std::move(v));
  }
  return opt;
}

}  // namespace parameta
