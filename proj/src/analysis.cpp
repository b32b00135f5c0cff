#include "gali/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gali/core_math.hpp"

namespace gali {

namespace {

void check_same_shape(const AttentionRecords& a, const AttentionRecords& b, const char* op) {
  if (a.probs.empty() || b.probs.empty()) throw Error(std::string(op) + ": empty record set");
  if (a.probs.size() != a.layers * a.heads || b.probs.size() != b.layers * b.heads) {
    throw Error(std::string(op) + ": record set does not cover every layer and head");
  }
  const auto& ma = a.probs.front();
  const auto& mb = b.probs.front();
  if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(ma.rows()) + "x" +
                std::to_string(ma.cols()) + " vs " + std::to_string(mb.rows()) + "x" +
                std::to_string(mb.cols()));
  }
}

}  // namespace

Matrix averaged_attention(const AttentionRecords& records) {
  if (records.probs.empty()) throw Error("averaged_attention: empty record set");
  const auto& first = records.probs.front();
  Matrix avg(first.rows(), first.cols());
  for (const auto& m : records.probs) {
    if (m.rows() != avg.rows() || m.cols() != avg.cols()) {
      throw Error("averaged_attention: inconsistent matrix shapes");
    }
    for (std::size_t i = 0; i < m.size(); ++i) avg.data()[i] += m.data()[i];
  }
  const auto n = static_cast<double>(records.probs.size());
  for (double& v : avg.data()) v /= n;
  return avg;
}

double attn_matrix_diff(const AttentionRecords& a, const AttentionRecords& b) {
  check_same_shape(a, b, "attn_matrix_diff");
  const Matrix ma = averaged_attention(a);
  const Matrix mb = averaged_attention(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) sum += std::abs(ma.data()[i] - mb.data()[i]);
  return sum;
}

std::vector<double> row_entropy(const Matrix& probs) {
  std::vector<double> h(probs.rows(), 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double acc = 0.0;
    for (double p : probs.row(r)) {
      if (p > 0.0) acc -= p * std::log(p);
    }
    h[r] = acc;
  }
  return h;
}

std::vector<double> row_entropy_diff(const AttentionRecords& a, const AttentionRecords& b) {
  check_same_shape(a, b, "row_entropy_diff");
  const auto ha = row_entropy(averaged_attention(a));
  const auto hb = row_entropy(averaged_attention(b));
  std::vector<double> diff(ha.size());
  for (std::size_t i = 0; i < ha.size(); ++i) diff[i] = ha[i] - hb[i];
  return diff;
}

std::vector<double> trim_percentiles(std::span<const double> values, double lo, double hi) {
  if (!(0.0 <= lo && lo <= hi && hi <= 100.0)) {
    throw Error("trim_percentiles: need 0 <= lo <= hi <= 100");
  }
  if (values.empty()) return {};
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = [&](double pct) {
    const auto idx = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
    return sorted[idx == 0 ? 0 : idx - 1];
  };
  const double lo_v = rank(lo);
  const double hi_v = rank(hi);
  std::vector<double> kept;
  for (double v : values) {
    if (v >= lo_v && v <= hi_v) kept.push_back(v);
  }
  return kept;
}

DecaySeries decay_curve(std::span<const double> q, std::span<const double> k,
                        const RopeParams& params, std::size_t max_dist) {
  if (q.size() != params.head_dim || k.size() != params.head_dim) {
    throw Error("decay_curve: q and k must have head_dim entries");
  }
  const Matrix qm(1, q.size(), std::vector<double>(q.begin(), q.end()));
  const Matrix km(1, k.size(), std::vector<double>(k.begin(), k.end()));
  const std::int64_t zero[1] = {0};
  const Matrix k_rot = apply_rotary(km, rotary_tables(std::span<const std::int64_t>(zero), params));
  DecaySeries s;
  for (std::size_t r = 0; r <= max_dist; ++r) {
    const std::int64_t pos[1] = {static_cast<std::int64_t>(r)};
    const Matrix q_rot = apply_rotary(qm, rotary_tables(std::span<const std::int64_t>(pos), params));
    s.distances.push_back(pos[0]);
    s.logits.push_back(rotated_scores(q_rot, k_rot)(0, 0));
  }
  return s;
}

std::vector<double> windowed_abs_max(std::span<const double> logits, std::size_t window) {
  if (window == 0) throw Error("windowed_abs_max: window must be >= 1");
  std::vector<double> out;
  for (std::size_t start = 0; start < logits.size(); start += window) {
    double m = 0.0;
    for (std::size_t i = start; i < std::min(start + window, logits.size()); ++i) {
      m = std::max(m, std::abs(logits[i]));
    }
    out.push_back(m);
  }
  return out;
}

double perplexity(const Model& model, std::span<const TokenId> tokens, const RunMode& mode,
                  std::size_t context) {
  if (context < 1) throw Error("perplexity: context must be >= 1");
  if (tokens.size() < 2) throw Error("perplexity: need at least 2 tokens");
  RunMode m = mode;
  m.record_attention = false;
  double nll = 0.0;
  std::size_t scored = 0;
  for (std::size_t start = 0; start < tokens.size(); start += context) {
    const auto window = tokens.subspan(start, std::min(context, tokens.size() - start));
    if (window.size() < 2) continue;
    const Matrix logits = forward_prefill(model, window, m).logits;
    for (std::size_t t = 1; t < window.size(); ++t) {
      const auto row = logits.row(t - 1);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      nll -= row[window[t]] - mx - std::log(z);
      ++scored;
    }
  }
  if (scored == 0) throw Error("perplexity: context too short to score any token");
  return std::exp(nll / static_cast<double>(scored));
}

const MethodComparison& DistributionStudy::find(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m;
  }
  throw Error("DistributionStudy: no method '" + method + "'");
}

DistributionStudy distribution_study(const Model& model, std::span<const TokenId> tokens,
                                     const GaliConfig& gali) {
  gali.validate();
  const std::size_t n = tokens.size();
  const auto run = [&](RunMode mode) {
    mode.record_attention = true;
    return std::move(*forward_prefill(model, tokens, mode).attention);
  };

  DistributionStudy study;
  study.reference = run(RunMode::exact());

  std::vector<std::pair<std::string, RunMode>> modes;
  modes.emplace_back("gali", RunMode::with_gali(gali));
  if (gali.noise != NoiseMode::off) {
    GaliConfig quiet = gali;
    quiet.noise = NoiseMode::off;
    modes.emplace_back("gali-nonoise", RunMode::with_gali(quiet));
  }
  const double factor = std::max(1.0, static_cast<double>(n) / static_cast<double>(gali.train_window));
  modes.emplace_back("pi", RunMode::with_baseline({BaselineMethod::pi, factor, gali.train_window}));
  modes.emplace_back("ntk", RunMode::with_baseline({BaselineMethod::ntk, factor, gali.train_window}));
  modes.emplace_back("dyn-ntk",
                     RunMode::with_baseline({BaselineMethod::dyn_ntk, factor, gali.train_window}));

  for (auto& [name, mode] : modes) {
    MethodComparison c{name, run(mode), 0.0, {}};
    c.matrix_diff = attn_matrix_diff(c.records, study.reference);
    c.entropy_diff = row_entropy_diff(c.records, study.reference);
    study.methods.push_back(std::move(c));
  }
  return study;
}

}  // namespace gali
