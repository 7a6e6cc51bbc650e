#include "parameta/encoder.hpp"

#include <cmath>

#include "parameta/errors.hpp"

namespace parameta {

using diff::Graph;
using diff::Parameter;
using diff::Var;

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::frame_mlp: return "frame_mlp";
    case Backbone::recurrent: return "recurrent";
    case Backbone::attention_pool: return "attention_pool";
  }
  return "unknown";
}

Backbone backbone_from_string(const std::string& s) {
  if (s == "frame_mlp") return Backbone::frame_mlp;
  if (s == "recurrent") return Backbone::recurrent;
  if (s == "attention_pool") return Backbone::attention_pool;
  throw ValidationError("unknown backbone '" + s + "' (expected frame_mlp|recurrent|attention_pool)");
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (auto& x : m.data()) x = u(rng);
  return m;
}

nlohmann::json parameter_to_json(const Parameter& p) {
  return {{"name", p.name},
          {"rows", p.value.rows()},
          {"cols", p.value.cols()},
          {"decay", p.decay},
          {"values", p.value.data()}};
}

Parameter parameter_from_json(const nlohmann::json& j) {
  return Parameter(j.at("name").get<std::string>(),
                   Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                          j.at("values").get<std::vector<real>>()),
                   j.at("decay").get<bool>());
}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.bins == 0 || cfg.hidden == 0 || cfg.dim == 0) {
    throw ValidationError("encoder widths must be positive");
  }
  const std::size_t F = cfg.bins, H = cfg.hidden, D = cfg.dim;
  switch (cfg.backbone) {
    case Backbone::frame_mlp:
      params_.emplace_back("encoder.w1", glorot_uniform(F, H, rng));
      params_.emplace_back("encoder.b1", Matrix(1, H), false);
      params_.emplace_back("encoder.w2", glorot_uniform(H, D, rng));
      params_.emplace_back("encoder.b2", Matrix(1, D), false);
      break;
    case Backbone::recurrent:
      params_.emplace_back("encoder.w_in", glorot_uniform(F, H, rng));
      params_.emplace_back("encoder.w_rec", glorot_uniform(H, H, rng));
      params_.emplace_back("encoder.b", Matrix(1, H), false);
      params_.emplace_back("encoder.w_out", glorot_uniform(H, D, rng));
      params_.emplace_back("encoder.b_out", Matrix(1, D), false);
      break;
    case Backbone::attention_pool:
      params_.emplace_back("encoder.w_key", glorot_uniform(F, H, rng));
      params_.emplace_back("encoder.b_key", Matrix(1, H), false);
      params_.emplace_back("encoder.query", glorot_uniform(H, 1, rng));
      params_.emplace_back("encoder.w_out", glorot_uniform(F, D, rng));
      params_.emplace_back("encoder.b_out", Matrix(1, D), false);
      break;
  }
}

template <class Bind>
Var Encoder::forward(Graph& g, const FrameBatch& batch, Bind&& bind) const {
  if (batch.empty()) throw DimensionError("encode: empty batch");
  for (const Matrix* m : batch) {
    if (m->rows() != cfg_.bins) {
      throw DimensionError("encode: sample has " + std::to_string(m->rows()) + " feature bins, encoder expects " +
                           std::to_string(cfg_.bins));
    }
    if (m->cols() == 0) throw DimensionError("encode: sample has no frames");
  }
  const std::size_t B = batch.size(), F = cfg_.bins;

  switch (cfg_.backbone) {
    case Backbone::frame_mlp: {
      Matrix pooled(B, F);
      for (std::size_t i = 0; i < B; ++i) {
        const Matrix& m = *batch[i];
        for (std::size_t f = 0; f < F; ++f) {
          real s = 0.0;
          for (std::size_t k = 0; k < m.cols(); ++k) s += m(f, k);
          pooled(i, f) = s / static_cast<real>(m.cols());
        }
      }
      Var x = g.constant(std::move(pooled));
      Var h = diff::tanh(diff::add_row(diff::matmul(x, bind(0)), bind(1)));
      return diff::add_row(diff::matmul(h, bind(2)), bind(3));
    }

    case Backbone::recurrent: {
      Var w_in = bind(0), w_rec = bind(1), b = bind(2);
      auto run = [&](std::span<const Matrix* const> group) {
        const std::size_t steps = group.front()->cols();
        Var h;
        for (std::size_t k = 0; k < steps; ++k) {
          Matrix xk(group.size(), F);
          for (std::size_t i = 0; i < group.size(); ++i)
            for (std::size_t f = 0; f < F; ++f) xk(i, f) = (*group[i])(f, k);
          Var pre = diff::matmul(g.constant(std::move(xk)), w_in);
          if (k > 0) pre = diff::add(pre, diff::matmul(h, w_rec));
          h = diff::tanh(diff::add_row(pre, b));
        }
        return h;
      };
      bool uniform = true;
      for (const Matrix* m : batch) uniform = uniform && m->cols() == batch.front()->cols();
      Var last;
      if (uniform) {
        last = run(batch);
      } else {
        std::vector<Var> rows;
        for (const Matrix* m : batch) rows.push_back(run(std::span<const Matrix* const>(&m, 1)));
        last = diff::concat_rows(rows);
      }
      return diff::add_row(diff::matmul(last, bind(3)), bind(4));
    }

    case Backbone::attention_pool: {
      Var w_key = bind(0), b_key = bind(1), query = bind(2);
      std::vector<Var> pooled;
      pooled.reserve(B);
      for (const Matrix* m : batch) {
        Var x = g.constant(m->transposed());  // t x F
        Var keys = diff::tanh(diff::add_row(diff::matmul(x, w_key), b_key));
        Var attn = diff::softmax_rows(diff::transpose(diff::matmul(keys, query)));  // 1 x t
        pooled.push_back(diff::matmul(attn, x));                                     // 1 x F
      }
      return diff::add_row(diff::matmul(diff::concat_rows(pooled), bind(3)), bind(4));
    }
  }
  throw ValidationError("unhandled backbone");
}

Var Encoder::encode(Graph& g, const FrameBatch& batch) {
  return forward(g, batch, [&](std::size_t i) { return g.parameter(params_[i]); });
}

Var Encoder::encode(Graph& g, const FrameBatch& batch) const {
  return forward(g, batch, [&](std::size_t i) { return g.constant(params_[i].value); });
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t Encoder::count_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::size_t Encoder::expected_parameter_count(const EncoderConfig& cfg) {
  const std::size_t F = cfg.bins, H = cfg.hidden, D = cfg.dim;
  switch (cfg.backbone) {
    case Backbone::frame_mlp: return F * H + H + H * D + D;
    case Backbone::recurrent: return F * H + H * H + H + H * D + D;
    case Backbone::attention_pool: return F * H + H + H + F * D + D;
  }
  return 0;
}

nlohmann::json Encoder::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : params_) params.push_back(parameter_to_json(p));
  return {{"backbone", to_string(cfg_.backbone)},
          {"bins", cfg_.bins},
          {"hidden", cfg_.hidden},
          {"dim", cfg_.dim},
          {"parameters", params}};
}

Encoder Encoder::from_json(const nlohmann::json& j) {
  Encoder e;
  e.cfg_.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  e.cfg_.bins = j.at("bins").get<std::size_t>();
  e.cfg_.hidden = j.at("hidden").get<std::size_t>();
  e.cfg_.dim = j.at("dim").get<std::size_t>();
  for (const auto& p : j.at("parameters")) e.params_.push_back(parameter_from_json(p));
  if (e.count_parameters() != expected_parameter_count(e.cfg_)) {
    throw ParseError("encoder section holds " + std::to_string(e.count_parameters()) + " values, backbone " +
                     to_string(e.cfg_.backbone) + " needs " + std::to_string(expected_parameter_count(e.cfg_)));
  }
  return e;
}

}  // namespace parameta
