#include "gali/model.hpp"

#include <cmath>
#include <string>

#include "gali/core_math.hpp"
#include "gali/philox.hpp"

namespace gali {

void ModelSpec::validate() const {
  if (vocab < 1 || layers < 1 || heads < 1 || head_dim < 1 || hidden < 1 || mlp_hidden < 1) {
    throw Error("ModelSpec: all counts must be >= 1");
  }
  if (head_dim % 2 != 0) throw Error("ModelSpec: head_dim must be even");
  if (hidden != heads * head_dim) {
    throw Error("ModelSpec: hidden " + std::to_string(hidden) + " != heads * head_dim (" +
                std::to_string(heads) + " * " + std::to_string(head_dim) + ")");
  }
}

std::vector<TensorShape> tensor_manifest(const ModelSpec& spec) {
  std::vector<TensorShape> m;
  m.push_back({"embed", spec.vocab, spec.hidden});
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    m.push_back({p + "attn_norm", 1, spec.hidden});
    m.push_back({p + "wq", spec.hidden, spec.hidden});
    m.push_back({p + "wk", spec.hidden, spec.hidden});
    m.push_back({p + "wv", spec.hidden, spec.hidden});
    m.push_back({p + "wo", spec.hidden, spec.hidden});
    m.push_back({p + "mlp_norm", 1, spec.hidden});
    m.push_back({p + "w_gate", spec.hidden, spec.mlp_hidden});
    m.push_back({p + "w_up", spec.hidden, spec.mlp_hidden});
    m.push_back({p + "w_down", spec.mlp_hidden, spec.hidden});
  }
  m.push_back({"final_norm", 1, spec.hidden});
  m.push_back({"lm_head", spec.hidden, spec.vocab});
  return m;
}

std::vector<Matrix*> tensor_slots(Weights& w) {
  std::vector<Matrix*> s{&w.embed};
  for (auto& l : w.layers) {
    s.insert(s.end(), {&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_norm, &l.w_gate, &l.w_up,
                       &l.w_down});
  }
  s.push_back(&w.final_norm);
  s.push_back(&w.lm_head);
  return s;
}

Model::Model(ModelSpec spec, Weights weights)
    : spec_(spec), weights_(std::move(weights)), rope_(rope_theta(spec.head_dim, spec.rope_base)) {
  spec_.validate();
  if (weights_.layers.size() != spec_.layers) throw Error("Model: layer count mismatch");
  const auto manifest = tensor_manifest(spec_);
  const auto slots = tensor_slots(weights_);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (slots[i]->rows() != manifest[i].rows || slots[i]->cols() != manifest[i].cols) {
      throw Error("Model: tensor " + manifest[i].name + " has shape " +
                  std::to_string(slots[i]->rows()) + "x" + std::to_string(slots[i]->cols()) +
                  ", expected " + std::to_string(manifest[i].rows) + "x" +
                  std::to_string(manifest[i].cols));
    }
  }
}

Model Model::random(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Weights w;
  w.layers.resize(spec.layers);
  const auto manifest = tensor_manifest(spec);
  const auto slots = tensor_slots(w);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& t = manifest[i];
    const bool is_norm = t.name.ends_with("norm");
    *slots[i] = Matrix(t.rows, t.cols, 1.0);
    if (is_norm) continue;
    PhiloxStream rng(seed, static_cast<std::uint32_t>(i));
    for (double& v : slots[i]->data()) v = static_cast<double>(static_cast<float>(rng.normal() * scale));
  }
  return Model(spec, std::move(w));
}

std::string_view to_string(AttentionMethod method) {
  switch (method) {
    case AttentionMethod::exact: return "exact";
    case AttentionMethod::gali: return "gali";
    case AttentionMethod::pi: return "pi";
    case AttentionMethod::ntk: return "ntk";
    case AttentionMethod::dyn_ntk: return "dyn-ntk";
  }
  return "exact";
}

AttentionMethod parse_attention_method(std::string_view text) {
  if (text == "exact") return AttentionMethod::exact;
  if (text == "gali") return AttentionMethod::gali;
  if (text == "pi") return AttentionMethod::pi;
  if (text == "ntk") return AttentionMethod::ntk;
  if (text == "dyn-ntk") return AttentionMethod::dyn_ntk;
  throw Error("unknown attention mode '" + std::string(text) +
              "' (expected exact, gali, pi, ntk or dyn-ntk)");
}

RunMode RunMode::with_baseline(const BaselineConfig& cfg) {
  RunMode m;
  m.baseline = cfg;
  switch (cfg.method) {
    case BaselineMethod::exact: m.attention = AttentionMethod::exact; break;
    case BaselineMethod::pi: m.attention = AttentionMethod::pi; break;
    case BaselineMethod::ntk: m.attention = AttentionMethod::ntk; break;
    case BaselineMethod::dyn_ntk: m.attention = AttentionMethod::dyn_ntk; break;
  }
  return m;
}

SpanPositions::SpanPositions(const Model& model, const RunMode& mode, std::size_t seq_len,
                             std::size_t span, std::uint32_t step)
    : model_(&model), mode_(&mode), seq_len_(seq_len), step_(step) {
  if (mode.attention == AttentionMethod::gali && seq_len > mode.gali.train_window) {
    ids_ = interpolate_position_ids(seq_len - span, span, mode.gali);
    rel_ = relative_structure(ids_, span);
    if (mode.gali.noise != NoiseMode::off) noise_ = noise_spec(seq_len, ids_, *rel_, mode.gali);
  } else {
    ids_ = integer_position_ids(seq_len);
  }
}

Matrix SpanPositions::logits(const Matrix& q_head, const Matrix& k_head, std::size_t layer,
                             std::size_t head) const {
  const auto& rope = model_->rope();
  switch (mode_->attention) {
    case AttentionMethod::exact:
      return exact_logits(q_head, k_head, iota_positions(seq_len_), rope);
    case AttentionMethod::gali: {
      if (!rel_) return exact_logits(q_head, k_head, iota_positions(seq_len_), rope);
      static const NoiseSpec kNoNoise{};
      const NoiseContext ctx{static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(head),
                             step_};
      return gali_logits(q_head, k_head, *rel_, rope, mode_->gali.seed,
                         noise_ ? *noise_ : kNoNoise, ctx);
    }
    case AttentionMethod::pi:
    case AttentionMethod::ntk:
    case AttentionMethod::dyn_ntk: {
      BaselineConfig cfg = mode_->baseline;
      cfg.method = mode_->attention == AttentionMethod::pi    ? BaselineMethod::pi
                   : mode_->attention == AttentionMethod::ntk ? BaselineMethod::ntk
                                                              : BaselineMethod::dyn_ntk;
      return baseline_logits(q_head, k_head, seq_len_, cfg, rope);
    }
  }
  throw Error("SpanPositions: unknown attention method");
}

namespace {

Matrix embed_tokens(const Model& model, std::span<const TokenId> tokens) {
  const auto& spec = model.spec();
  Matrix x(tokens.size(), spec.hidden);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= spec.vocab) {
      throw Error("token id " + std::to_string(tokens[t]) + " out of range for vocab " +
                  std::to_string(spec.vocab));
    }
    const auto src = model.weights().embed.row(tokens[t]);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  return x;
}

void add_in_place(Matrix& x, const Matrix& delta) {
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += delta.data()[i];
}

Matrix swiglu(const Model& model, const LayerWeights& lw, const Matrix& x) {
  const Matrix xn = par::rms_norm_rows(x, lw.mlp_norm.row(0), model.spec().norm_eps);
  Matrix gate = par::matmul(xn, lw.w_gate);
  const Matrix up = par::matmul(xn, lw.w_up);
  for (std::size_t i = 0; i < gate.size(); ++i) {
    const double g = gate.data()[i];
    gate.data()[i] = g / (1.0 + std::exp(-g)) * up.data()[i];
  }
  return par::matmul(gate, lw.w_down);
}

/// Runs `tokens` as one span on top of `cache`; returns span x vocab logits.
Matrix run_span(const Model& model, KvCache& cache, std::span<const TokenId> tokens,
                const RunMode& mode, std::uint32_t step, AttentionRecords* records) {
  const auto& spec = model.spec();
  const std::size_t span = tokens.size();
  const std::size_t seq_len = cache.tokens + span;
  const std::size_t d = spec.head_dim;
  const SpanPositions positions(model, mode, seq_len, span, step);
  const CausalMask mask{seq_len, span};

  Matrix x = embed_tokens(model, tokens);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const auto& lw = model.weights().layers[l];
    auto& lc = cache.layers[l];
    const Matrix xn = par::rms_norm_rows(x, lw.attn_norm.row(0), spec.norm_eps);
    const Matrix q = par::matmul(xn, lw.wq);
    lc.keys_unrotated.append_rows(par::matmul(xn, lw.wk));
    lc.values.append_rows(par::matmul(xn, lw.wv));

    Matrix attn(span, spec.hidden);
    for (std::size_t h = 0; h < spec.heads; ++h) {
      const Matrix logits = positions.logits(q.slice_cols(h * d, d),
                                             lc.keys_unrotated.slice_cols(h * d, d), l, h);
      const Matrix probs = par::masked_softmax(logits, mask);
      attn.set_cols(h * d, par::matmul(probs, lc.values.slice_cols(h * d, d)));
      if (records != nullptr) {
        Matrix& rec = records->probs[l * spec.heads + h];
        for (std::size_t r = 0; r < span; ++r) {
          const auto src = probs.row(r);
          std::copy(src.begin(), src.end(), rec.row(cache.tokens + r).begin());
        }
      }
    }
    add_in_place(x, par::matmul(attn, lw.wo));
    add_in_place(x, swiglu(model, lw, x));
  }
  cache.tokens = seq_len;
  const Matrix xn = par::rms_norm_rows(x, model.weights().final_norm.row(0), spec.norm_eps);
  return par::matmul(xn, model.weights().lm_head);
}

}  // namespace

PrefillOutput forward_prefill(const Model& model, std::span<const TokenId> tokens,
                              const RunMode& mode) {
  if (tokens.empty()) throw Error("forward_prefill: empty input");
  const auto& spec = model.spec();
  PrefillOutput out{Matrix(0, spec.vocab), KvCache::empty(spec), std::nullopt};
  if (mode.record_attention) {
    out.attention = AttentionRecords{spec.layers, spec.heads,
                                     std::vector<Matrix>(spec.layers * spec.heads,
                                                         Matrix(tokens.size(), tokens.size()))};
  }
  std::vector<std::size_t> chunks{tokens.size()};
  if (mode.attention == AttentionMethod::gali) chunks = plan_chunks(tokens.size(), mode.gali).sizes;

  std::size_t done = 0;
  for (std::size_t c : chunks) {
    out.logits.append_rows(run_span(model, out.cache, tokens.subspan(done, c), mode, 0,
                                    out.attention ? &*out.attention : nullptr));
    done += c;
  }
  return out;
}

std::vector<double> decode_step(const Model& model, KvCache& cache, TokenId token,
                                const RunMode& mode, std::uint32_t step) {
  if (cache.tokens == 0) throw Error("decode_step: empty cache");
  const TokenId one[1] = {token};
  const Matrix logits = run_span(model, cache, one, mode, step, nullptr);
  return logits.data();
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prompt, std::size_t n,
                              const RunMode& mode) {
  std::vector<TokenId> out;
  if (n == 0) return out;
  RunMode m = mode;
  m.record_attention = false;
  auto pre = forward_prefill(model, prompt, m);
  const auto last = pre.logits.row(pre.logits.rows() - 1);
  out.push_back(static_cast<TokenId>(argmax(last)));
  for (std::uint32_t step = 1; out.size() < n; ++step) {
    const auto logits = decode_step(model, pre.cache, out.back(), m, step);
    out.push_back(static_cast<TokenId>(argmax(logits)));
  }
  return out;
}

}  // namespace gali
