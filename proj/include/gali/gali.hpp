#pragma once

// Chunk-wise position-id interpolation and attention-logit interpolation.
//
// A prefill longer than the training window is split into chunks. Every chunk
// (and every decode token, as a chunk of one) reassigns position ids to the
// whole prefix: the trailing `local_window` tokens keep integer ids ending at
// train_window - 1 and everything earlier is packed into groups of `g`
// fractional ids per integer interval. Logits for a fractional distance r are
// linear interpolations between the logits at floor(r) and ceil(r), computed
// with two rotary passes over the keys.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gali/matrix.hpp"
#include "gali/rational.hpp"
#include "gali/rope.hpp"

namespace gali {

/// Which standard deviation the interpolation noise uses.
///  - seq_len: (i - j) / seq_len over integer token indices (pseudo-code form)
///  - train_window: r / train_window with r the interpolated distance
///  - off: no noise
enum class NoiseMode { seq_len, train_window, off };

/// CLI spelling: alg3 / eq3 / off.
std::string_view to_string(NoiseMode mode);
NoiseMode parse_noise_mode(std::string_view text);

struct GaliConfig {
  std::size_t train_window = 64;
  std::size_t chunk_size = 16;
  std::size_t local_window = 8;
  NoiseMode noise = NoiseMode::seq_len;
  std::uint64_t seed = 0;

  /// Throws unless 0 < local_window < train_window and chunk_size >= 1.
  void validate() const;
};

struct ChunkPlan {
  std::vector<std::size_t> sizes;
};

/// Position ids of a whole sequence, exact rationals sharing the denominator
/// `group_size`.
struct PositionIds {
  std::int64_t group_size = 1;
  std::vector<Rational> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool all_integer() const noexcept;
};

/// Ceil/floor ids and interpolation weights for a query span (the trailing
/// `query_count` ids) against every key.
struct RelativeDistance {
  std::size_t query_count = 0;
  std::size_t key_count = 0;
  std::vector<std::int64_t> ceil_ids;   // one per key
  std::vector<std::int64_t> floor_ids;  // one per key
  std::vector<Rational> rel_coef;       // query_count x key_count, row-major

  std::size_t query_offset() const noexcept { return key_count - query_count; }
  const Rational& coef(std::size_t q, std::size_t k) const { return rel_coef[q * key_count + k]; }
};

struct NoiseSpec {
  NoiseMode mode = NoiseMode::off;
  Matrix std_dev;                  // query_count x key_count
  std::vector<std::uint8_t> mask;  // 1 where rel_coef != 0 and causally permitted

  bool masked(std::size_t q, std::size_t k) const { return mask[q * std_dev.cols() + k] != 0; }
};

/// Addresses one attention call's noise draws inside the counter-based RNG.
struct NoiseContext {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t step = 0;
};

ChunkPlan plan_chunks(std::size_t prefill_len, const GaliConfig& cfg);

/// Minimal number of ids per integer interval: ceil((target - L_w) / (L_tr - L_w)).
std::size_t group_size(std::size_t target_len, const GaliConfig& cfg);

/// Ids for a sequence growing from cur_len by add_token tokens
/// (cur_len + add_token >= train_window).
PositionIds interpolate_position_ids(std::size_t cur_len, std::size_t add_token,
                                     const GaliConfig& cfg);

/// 0, 1, ..., n-1.
PositionIds integer_position_ids(std::size_t n);

RelativeDistance relative_structure(const PositionIds& ids,
                                    std::optional<std::size_t> query_count = std::nullopt);

NoiseSpec noise_spec(std::size_t seq_len, const PositionIds& ids, const GaliConfig& cfg,
                     std::optional<std::size_t> query_count = std::nullopt);
NoiseSpec noise_spec(std::size_t seq_len, const PositionIds& ids, const RelativeDistance& rel,
                     const GaliConfig& cfg);

/// Linear interpolation between the logits at floor(r) and ceil(r).
inline double interpolate_logit(double attn_floor, double attn_ceil, double rel_coef) noexcept {
  return attn_floor - (attn_floor - attn_ceil) * rel_coef;
}

/// Zero-mean Gaussian draw with unit variance for one logit cell.
double noise_draw(std::uint64_t seed, const NoiseContext& ctx, std::size_t query_index,
                  std::size_t key_index);

/// Interpolated logits for queries `q` (the trailing rows of the sequence)
/// against unrotated keys `k_unrotated` (every row of the sequence).
Matrix gali_logits(const Matrix& q, const Matrix& k_unrotated, const PositionIds& ids,
                   const RopeParams& params, const GaliConfig& cfg, const NoiseSpec& noise,
                   const NoiseContext& ctx = {});

/// Same, reusing a precomputed relative structure (shared across heads).
Matrix gali_logits(const Matrix& q, const Matrix& k_unrotated, const RelativeDistance& rel,
                   const RopeParams& params, std::uint64_t seed, const NoiseSpec& noise,
                   const NoiseContext& ctx = {});

}  // namespace gali
