#pragma once

#include <string_view>
#include <vector>

#include "gali/matrix.hpp"
#include "gali/rope.hpp"

namespace gali {

enum class BaselineMethod { exact, pi, ntk, dyn_ntk };

std::string_view to_string(BaselineMethod method);
BaselineMethod parse_baseline_method(std::string_view text);

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::exact;
  double factor = 1.0;  // used by ntk; pi and dyn-ntk derive theirs from the length
  std::size_t train_window = 64;
};

/// Linear position interpolation: ids[i] = i * train_window / max(seq_len, train_window).
std::vector<double> pi_position_ids(std::size_t seq_len, std::size_t train_window);

/// NTK-aware base rescaling: base' = base * factor^(d / (d - 2)).
RopeParams ntk_theta(const RopeParams& params, double factor);

/// max(1, seq_len / train_window).
double dyn_ntk_factor(std::size_t seq_len, std::size_t train_window);

/// Logits for queries `q` (trailing rows) against keys `k` (all `seq_len`
/// rows, unrotated) under the selected baseline.
Matrix baseline_logits(const Matrix& q, const Matrix& k, std::size_t seq_len,
                       const BaselineConfig& cfg, const RopeParams& params);

}  // namespace gali
