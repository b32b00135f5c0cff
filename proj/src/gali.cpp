#include "gali/gali.hpp"

#include <algorithm>
#include <string>

#include "gali/core_math.hpp"
#include "gali/philox.hpp"

namespace gali {

std::string_view to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::seq_len: return "alg3";
    case NoiseMode::train_window: return "eq3";
    case NoiseMode::off: return "off";
  }
  return "off";
}

NoiseMode parse_noise_mode(std::string_view text) {
  if (text == "alg3") return NoiseMode::seq_len;
  if (text == "eq3") return NoiseMode::train_window;
  if (text == "off") return NoiseMode::off;
  throw Error("unknown noise mode '" + std::string(text) + "' (expected alg3, eq3 or off)");
}

void GaliConfig::validate() const {
  if (!(local_window > 0 && local_window < train_window)) {
    throw Error("GaliConfig: need 0 < local_window < train_window, got local_window=" +
                std::to_string(local_window) + " train_window=" + std::to_string(train_window));
  }
  if (chunk_size < 1) throw Error("GaliConfig: chunk_size must be >= 1");
}

bool PositionIds::all_integer() const noexcept {
  return std::all_of(ids.begin(), ids.end(), [](const Rational& r) { return r.is_integer(); });
}

ChunkPlan plan_chunks(std::size_t prefill_len, const GaliConfig& cfg) {
  cfg.validate();
  if (prefill_len == 0) throw Error("plan_chunks: prefill_len must be >= 1");
  ChunkPlan plan{{cfg.train_window}};
  std::size_t sum = cfg.train_window;
  while (sum < prefill_len) {
    plan.sizes.push_back(cfg.chunk_size);
    sum += cfg.chunk_size;
  }
  plan.sizes.back() -= sum - prefill_len;
  return plan;
}

std::size_t group_size(std::size_t target_len, const GaliConfig& cfg) {
  cfg.validate();
  if (target_len < cfg.train_window) {
    throw Error("group_size: target_len " + std::to_string(target_len) +
                " is below train_window " + std::to_string(cfg.train_window));
  }
  const std::size_t num = target_len - cfg.local_window;
  const std::size_t den = cfg.train_window - cfg.local_window;
  return (num + den - 1) / den;
}

PositionIds interpolate_position_ids(std::size_t cur_len, std::size_t add_token,
                                     const GaliConfig& cfg) {
  cfg.validate();
  if (add_token < 1) throw Error("interpolate_position_ids: add_token must be >= 1");
  const std::size_t target = cur_len + add_token;
  if (target < cfg.train_window) {
    throw Error("interpolate_position_ids: target length " + std::to_string(target) +
                " is below train_window " + std::to_string(cfg.train_window));
  }
  const auto g = static_cast<std::int64_t>(group_size(target, cfg));
  const auto l_tr = static_cast<std::int64_t>(cfg.train_window);

  PositionIds out{g, {}};
  std::vector<Rational>& ids = out.ids;
  ids.reserve(target);
  std::int64_t i = 0;
  std::int64_t total = l_tr;
  while (total < static_cast<std::int64_t>(target)) {
    for (std::int64_t j = 0; j < g; ++j) ids.emplace_back(i * g + j, g);
    ++i;
    total = l_tr - i + static_cast<std::int64_t>(ids.size());
  }
  // Keep only as many packed ids as the integer tail [i, L_tr) leaves room for.
  ids.resize(target - static_cast<std::size_t>(l_tr - i));
  for (std::int64_t j = i; j < l_tr; ++j) ids.emplace_back(j);
  return out;
}

PositionIds integer_position_ids(std::size_t n) {
  PositionIds out{1, {}};
  out.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.ids.emplace_back(static_cast<std::int64_t>(i));
  return out;
}

RelativeDistance relative_structure(const PositionIds& ids, std::optional<std::size_t> query_count) {
  const std::size_t n = ids.size();
  const std::size_t nq = query_count.value_or(n);
  if (nq > n) throw Error("relative_structure: query span longer than the sequence");
  RelativeDistance rel{nq, n, {}, {}, {}};
  rel.ceil_ids.resize(n);
  rel.floor_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rel.ceil_ids[i] = ids.ids[i].ceil();
    rel.floor_ids[i] = ids.ids[i].floor();
  }
  rel.rel_coef.resize(nq * n);
  const std::size_t offset = n - nq;
  for (std::size_t q = 0; q < nq; ++q) {
    const Rational top(rel.ceil_ids[offset + q]);
    for (std::size_t k = 0; k < n; ++k) {
      // ceil(m) is an integer, so (ceil(m) - id_n) mod 1 only depends on id_n.
      rel.rel_coef[q * n + k] = ids.ids[k].is_integer() ? Rational{} : (top - ids.ids[k]).frac();
    }
  }
  return rel;
}

NoiseSpec noise_spec(std::size_t seq_len, const PositionIds& ids, const GaliConfig& cfg,
                     std::optional<std::size_t> query_count) {
  return noise_spec(seq_len, ids, relative_structure(ids, query_count), cfg);
}

NoiseSpec noise_spec(std::size_t seq_len, const PositionIds& ids, const RelativeDistance& rel,
                     const GaliConfig& cfg) {
  if (seq_len != ids.size() || rel.key_count != ids.size()) {
    throw Error("noise_spec: seq_len " + std::to_string(seq_len) + " does not match " +
                std::to_string(ids.size()) + " position ids");
  }
  const std::size_t nq = rel.query_count;
  const std::size_t n = rel.key_count;
  NoiseSpec spec{cfg.noise, Matrix(nq, n), std::vector<std::uint8_t>(nq * n, 0)};
  const std::size_t offset = rel.query_offset();
  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t i = offset + q;
    for (std::size_t j = 0; j <= i; ++j) {
      spec.mask[q * n + j] = rel.coef(q, j).num() != 0 ? 1 : 0;
      switch (cfg.noise) {
        case NoiseMode::seq_len:
          spec.std_dev(q, j) = static_cast<double>(i - j) / static_cast<double>(seq_len);
          break;
        case NoiseMode::train_window: {
          const Rational r = Rational(rel.ceil_ids[i]) - ids.ids[j];
          spec.std_dev(q, j) = r.to_double() / static_cast<double>(cfg.train_window);
          break;
        }
        case NoiseMode::off: break;
      }
    }
  }
  return spec;
}

double noise_draw(std::uint64_t seed, const NoiseContext& ctx, std::size_t query_index,
                  std::size_t key_index) {
  return normal_at(seed, {static_cast<std::uint32_t>(query_index),
                          static_cast<std::uint32_t>(key_index), ctx.step,
                          (ctx.layer << 16) | (ctx.head & 0xFFFFu)});
}

Matrix gali_logits(const Matrix& q, const Matrix& k_unrotated, const PositionIds& ids,
                   const RopeParams& params, const GaliConfig& cfg, const NoiseSpec& noise,
                   const NoiseContext& ctx) {
  if (q.rows() > ids.size()) {
    throw Error("gali_logits: " + std::to_string(q.rows()) + " query rows exceed " +
                std::to_string(ids.size()) + " position ids");
  }
  return gali_logits(q, k_unrotated, relative_structure(ids, q.rows()), params, cfg.seed, noise,
                     ctx);
}

Matrix gali_logits(const Matrix& q, const Matrix& k_unrotated, const RelativeDistance& rel,
                   const RopeParams& params, std::uint64_t seed, const NoiseSpec& noise,
                   const NoiseContext& ctx) {
  if (q.cols() != params.head_dim || k_unrotated.cols() != params.head_dim) {
    throw Error("gali_logits: q/k columns do not match head_dim " +
                std::to_string(params.head_dim));
  }
  if (k_unrotated.rows() != rel.key_count || q.rows() != rel.query_count) {
    throw Error("gali_logits: span mismatch, " + std::to_string(q.rows()) + " queries and " +
                std::to_string(k_unrotated.rows()) + " keys for ids covering " +
                std::to_string(rel.query_count) + " queries and " +
                std::to_string(rel.key_count) + " keys");
  }
  const bool use_noise = noise.mode != NoiseMode::off;
  if (use_noise && (noise.std_dev.rows() != q.rows() || noise.std_dev.cols() != rel.key_count)) {
    throw Error("gali_logits: noise spec shape does not match the logit matrix");
  }

  const std::span<const std::int64_t> ceil_ids(rel.ceil_ids);
  const auto key_ceil = rotary_tables(ceil_ids, params);
  const auto query_ceil = rotary_tables(ceil_ids.subspan(rel.query_offset()), params);
  const Matrix q_rot = par::apply_rotary(q, query_ceil);
  // Keys at ceil(n) give distance floor(r); keys at floor(n) give ceil(r).
  Matrix out = rotated_scores(q_rot, par::apply_rotary(k_unrotated, key_ceil));

  const bool fractional = std::any_of(rel.rel_coef.begin(), rel.rel_coef.end(),
                                      [](const Rational& r) { return r.num() != 0; });
  if (!fractional) return out;

  const auto key_floor = rotary_tables(std::span<const std::int64_t>(rel.floor_ids), params);
  const Matrix attn_ceil = rotated_scores(q_rot, par::apply_rotary(k_unrotated, key_floor));

  const auto rows = static_cast<std::ptrdiff_t>(out.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto m = static_cast<std::size_t>(r);
    for (std::size_t n = 0; n < out.cols(); ++n) {
      const Rational& t = rel.coef(m, n);
      if (t.num() == 0) continue;
      out(m, n) = interpolate_logit(out(m, n), attn_ceil(m, n), t.to_double());
      if (use_noise && noise.masked(m, n) && noise.std_dev(m, n) > 0.0) {
        out(m, n) += noise.std_dev(m, n) * noise_draw(seed, ctx, rel.query_offset() + m, n);
      }
    }
  }
  return out;
}

}  // namespace gali
