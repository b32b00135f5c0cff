#include "gali/recompute_oracle.hpp"

#include <cmath>
#include <memory>

#include "gali/core_math.hpp"

namespace gali {

std::vector<ScheduledSpan> inference_schedule(std::size_t prompt_len, std::size_t decode_steps,
                                              const RunMode& mode) {
  std::vector<ScheduledSpan> s;
  if (mode.attention == AttentionMethod::gali) {
    for (std::size_t c : plan_chunks(prompt_len, mode.gali).sizes) s.push_back({c, 0});
  } else {
    s.push_back({prompt_len, 0});
  }
  for (std::size_t k = 1; k <= decode_steps; ++k) s.push_back({1, static_cast<std::uint32_t>(k)});
  return s;
}

Matrix recompute_logits(const Model& model, std::span<const TokenId> tokens,
                        std::span<const ScheduledSpan> schedule, const RunMode& mode) {
  const auto& spec = model.spec();
  const auto& w = model.weights();
  const std::size_t n = tokens.size();
  const std::size_t d = spec.head_dim;

  std::vector<std::unique_ptr<SpanPositions>> positions;
  std::vector<std::size_t> starts;
  std::size_t total = 0;
  for (const auto& sp : schedule) {
    starts.push_back(total);
    total += sp.size;
    positions.push_back(std::make_unique<SpanPositions>(model, mode, total, sp.size, sp.step));
  }
  if (total != n) throw Error("recompute_logits: schedule does not cover the tokens");

  Matrix x(n, spec.hidden);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < spec.hidden; ++c) x(t, c) = w.embed(tokens[t], c);
  }

  for (std::size_t l = 0; l < spec.layers; ++l) {
    const auto& lw = w.layers[l];
    const Matrix xn = rms_norm_rows(x, lw.attn_norm.row(0), spec.norm_eps);
    const Matrix q = matmul(xn, lw.wq);
    const Matrix k = matmul(xn, lw.wk);
    const Matrix v = matmul(xn, lw.wv);
    Matrix attn(n, spec.hidden);
    for (std::size_t s = 0; s < schedule.size(); ++s) {
      const std::size_t start = starts[s];
      const std::size_t len = schedule[s].size;
      const std::size_t end = start + len;
      for (std::size_t h = 0; h < spec.heads; ++h) {
        const Matrix qh = q.slice_rows(start, len).slice_cols(h * d, d);
        const Matrix kh = k.slice_rows(0, end).slice_cols(h * d, d);
        const Matrix vh = v.slice_rows(0, end).slice_cols(h * d, d);
        const Matrix probs = masked_softmax(positions[s]->logits(qh, kh, l, h), CausalMask{end, len});
        const Matrix out = matmul(probs, vh);
        for (std::size_t r = 0; r < len; ++r) {
          for (std::size_t c = 0; c < d; ++c) attn(start + r, h * d + c) = out(r, c);
        }
      }
    }
    const Matrix proj = matmul(attn, lw.wo);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += proj.data()[i];

    const Matrix xm = rms_norm_rows(x, lw.mlp_norm.row(0), spec.norm_eps);
    const Matrix gate = matmul(xm, lw.w_gate);
    const Matrix up = matmul(xm, lw.w_up);
    Matrix act(gate.rows(), gate.cols());
    for (std::size_t i = 0; i < act.size(); ++i) {
      const double g = gate.data()[i];
      act.data()[i] = g / (1.0 + std::exp(-g)) * up.data()[i];
    }
    const Matrix down = matmul(act, lw.w_down);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += down.data()[i];
  }
  return matmul(rms_norm_rows(x, w.final_norm.row(0), spec.norm_eps), w.lm_head);
}

}  // namespace gali
