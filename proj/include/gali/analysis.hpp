#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gali/model.hpp"

namespace gali {

/// Mean of every (layer, head) probability matrix.
Matrix averaged_attention(const AttentionRecords& records);

/// Sum of absolute elementwise differences between the layer/head averages.
double attn_matrix_diff(const AttentionRecords& a, const AttentionRecords& b);

/// Shannon entropy (natural log, 0 ln 0 = 0) of each row.
std::vector<double> row_entropy(const Matrix& probs);

/// Row entropies of the averaged matrices, a minus b.
std::vector<double> row_entropy_diff(const AttentionRecords& a, const AttentionRecords& b);

/// Values within the [lo, hi] percentile range (nearest-rank), order kept.
std::vector<double> trim_percentiles(std::span<const double> values, double lo, double hi);

struct DecaySeries {
  std::vector<std::int64_t> distances;
  std::vector<double> logits;
};

/// Logit between a query at position r and a key at position 0, r = 0..max_dist.
DecaySeries decay_curve(std::span<const double> q, std::span<const double> k,
                        const RopeParams& params, std::size_t max_dist);

/// Max of |logits| over consecutive non-overlapping windows of `window` entries.
std::vector<double> windowed_abs_max(std::span<const double> logits, std::size_t window);

/// exp(mean NLL) over `tokens` scored in consecutive windows of `context`
/// tokens; each window is a fresh prefill and its first token is not scored.
double perplexity(const Model& model, std::span<const TokenId> tokens, const RunMode& mode,
                  std::size_t context);

struct MethodComparison {
  std::string method;
  AttentionRecords records;
  double matrix_diff = 0.0;
  std::vector<double> entropy_diff;  // method minus reference, per row
};

struct DistributionStudy {
  AttentionRecords reference;
  std::vector<MethodComparison> methods;

  const MethodComparison& find(const std::string& method) const;
};

/// Runs the reference (exact RoPE over the full length) and gali, pi, ntk and
/// dyn-ntk restricted to `gali.train_window`, recording attention for each.
/// When gali noise is on, a noise-free gali run ("gali-nonoise") is added.
DistributionStudy distribution_study(const Model& model, std::span<const TokenId> tokens,
                                     const GaliConfig& gali);

}  // namespace gali
