#include "gali/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gali {

std::string_view to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::exact: return "exact";
    case BaselineMethod::pi: return "pi";
    case BaselineMethod::ntk: return "ntk";
    case BaselineMethod::dyn_ntk: return "dyn-ntk";
  }
  return "exact";
}

BaselineMethod parse_baseline_method(std::string_view text) {
  if (text == "exact") return BaselineMethod::exact;
  if (text == "pi") return BaselineMethod::pi;
  if (text == "ntk") return BaselineMethod::ntk;
  if (text == "dyn-ntk") return BaselineMethod::dyn_ntk;
  throw Error("unknown baseline method '" + std::string(text) + "'");
}

std::vector<double> pi_position_ids(std::size_t seq_len, std::size_t train_window) {
  if (seq_len < 1 || train_window < 1) throw Error("pi_position_ids: lengths must be >= 1");
  const double scale = static_cast<double>(train_window) /
                       static_cast<double>(std::max(seq_len, train_window));
  std::vector<double> ids(seq_len);
  for (std::size_t i = 0; i < seq_len; ++i) ids[i] = static_cast<double>(i) * scale;
  return ids;
}

RopeParams ntk_theta(const RopeParams& params, double factor) {
  if (params.head_dim <= 2) throw Error("ntk_theta: head_dim must exceed 2");
  if (!(factor >= 1.0)) throw Error("ntk_theta: factor must be >= 1");
  if (factor == 1.0) return params;
  const double d = static_cast<double>(params.head_dim);
  return rope_theta(params.head_dim, params.base * std::pow(factor, d / (d - 2.0)));
}

double dyn_ntk_factor(std::size_t seq_len, std::size_t train_window) {
  if (seq_len < 1 || train_window < 1) throw Error("dyn_ntk_factor: lengths must be >= 1");
  return std::max(1.0, static_cast<double>(seq_len) / static_cast<double>(train_window));
}

Matrix baseline_logits(const Matrix& q, const Matrix& k, std::size_t seq_len,
                       const BaselineConfig& cfg, const RopeParams& params) {
  if (k.rows() != seq_len) {
    throw Error("baseline_logits: " + std::to_string(k.rows()) + " keys for seq_len " +
                std::to_string(seq_len));
  }
  switch (cfg.method) {
    case BaselineMethod::exact:
      return exact_logits(q, k, iota_positions(seq_len), params);
    case BaselineMethod::pi:
      return rotary_logits(q, k, pi_position_ids(seq_len, cfg.train_window), params);
    case BaselineMethod::ntk:
      return exact_logits(q, k, iota_positions(seq_len), ntk_theta(params, cfg.factor));
    case BaselineMethod::dyn_ntk:
      return exact_logits(q, k, iota_positions(seq_len),
                          ntk_theta(params, dyn_ntk_factor(seq_len, cfg.train_window)));
  }
  throw Error("baseline_logits: unknown method");
}

}  // namespace gali
