#pragma once

// Toy Llama-style decoder: embedding, pre-norm blocks (RMSNorm → attention →
// residual → RMSNorm → SwiGLU → residual), final norm and output head.
// The KV cache keeps keys unrotated because position ids of the whole prefix
// change with every interpolated chunk and decode step.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gali/baselines.hpp"
#include "gali/gali.hpp"
#include "gali/matrix.hpp"
#include "gali/rope.hpp"

namespace gali {

using TokenId = std::uint32_t;

/// Byte-level vocabulary plus one pad id.
inline constexpr std::size_t kByteVocab = 257;
inline constexpr TokenId kPadToken = 256;

struct ModelSpec {
  std::size_t vocab = kByteVocab;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t hidden = 64;
  std::size_t mlp_hidden = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  void validate() const;
};

struct LayerWeights {
  Matrix attn_norm;  // 1 x hidden
  Matrix wq, wk, wv, wo;
  Matrix mlp_norm;  // 1 x hidden
  Matrix w_gate, w_up;  // hidden x mlp_hidden
  Matrix w_down;        // mlp_hidden x hidden
};

struct Weights {
  Matrix embed;  // vocab x hidden
  std::vector<LayerWeights> layers;
  Matrix final_norm;  // 1 x hidden
  Matrix lm_head;     // hidden x vocab
};

struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Tensor names and shapes in file order.
std::vector<TensorShape> tensor_manifest(const ModelSpec& spec);

/// Pointers to each tensor of `w`, in manifest order.
std::vector<Matrix*> tensor_slots(Weights& w);

class Model {
 public:
  Model(ModelSpec spec, Weights weights);

  /// Seeded Gaussian weights scaled by 1/sqrt(hidden), rounded to float so a
  /// save/load roundtrip is exact. Norm gains are 1.
  static Model random(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  const Weights& weights() const noexcept { return weights_; }
  Weights& mutable_weights() noexcept { return weights_; }
  const RopeParams& rope() const noexcept { return rope_; }

 private:
  ModelSpec spec_;
  Weights weights_;
  RopeParams rope_;
};

enum class AttentionMethod { exact, gali, pi, ntk, dyn_ntk };

std::string_view to_string(AttentionMethod method);
AttentionMethod parse_attention_method(std::string_view text);

struct RunMode {
  AttentionMethod attention = AttentionMethod::exact;
  GaliConfig gali;
  BaselineConfig baseline;
  bool record_attention = false;

  static RunMode exact() { return {}; }
  static RunMode with_gali(const GaliConfig& cfg) {
    RunMode m;
    m.attention = AttentionMethod::gali;
    m.gali = cfg;
    return m;
  }
  static RunMode with_baseline(const BaselineConfig& cfg);
};

struct LayerCache {
  Matrix keys_unrotated;  // tokens x hidden
  Matrix values;          // tokens x hidden
};

struct KvCache {
  std::vector<LayerCache> layers;
  std::size_t tokens = 0;

  static KvCache empty(const ModelSpec& spec) { return {std::vector<LayerCache>(spec.layers), 0}; }
};

/// Post-softmax attention probabilities, one full (tokens x tokens) matrix per
/// (layer, head), indexed layer * heads + head.
struct AttentionRecords {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<Matrix> probs;

  const Matrix& at(std::size_t layer, std::size_t head) const { return probs[layer * heads + head]; }
};

struct PrefillOutput {
  Matrix logits;  // tokens x vocab
  KvCache cache;
  std::optional<AttentionRecords> attention;
};

/// Processes `tokens` from an empty cache. In gali mode the input is split by
/// plan_chunks and each chunk sees a fresh position-id assignment for the
/// whole prefix.
PrefillOutput forward_prefill(const Model& model, std::span<const TokenId> tokens,
                              const RunMode& mode);

/// Appends one token and returns next-token logits. `step` keys the noise RNG.
std::vector<double> decode_step(const Model& model, KvCache& cache, TokenId token,
                                const RunMode& mode, std::uint32_t step);

/// Greedy continuation of `prompt` by `n` tokens (argmax, lowest index on ties).
std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prompt, std::size_t n,
                              const RunMode& mode);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

/// Position assignment for one span of `span` query tokens ending a sequence
/// of `seq_len` tokens, shared by every layer and head of that span.
class SpanPositions {
 public:
  SpanPositions(const Model& model, const RunMode& mode, std::size_t seq_len, std::size_t span,
                std::uint32_t step);

  /// Pre-softmax logits of one head: q_head is span x d, k_head seq_len x d (unrotated).
  Matrix logits(const Matrix& q_head, const Matrix& k_head, std::size_t layer,
                std::size_t head) const;

  bool interpolated() const noexcept { return rel_.has_value(); }
  /// Ids of the whole sequence in gali mode (integer ids otherwise).
  const PositionIds& ids() const noexcept { return ids_; }

 private:
  const Model* model_;
  const RunMode* mode_;
  std::size_t seq_len_;
  std::uint32_t step_;
  PositionIds ids_;
  std::optional<RelativeDistance> rel_;
  std::optional<NoiseSpec> noise_;
};

// Weight file: textual "key: value" header ending in "end", float32 LE payload
// in manifest order, then a 64-bit FNV-1a checksum of the payload.
void save_weights(const std::filesystem::path& path, const Model& model);
Model load_weights(const std::filesystem::path& path);
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

/// Token streams: one unsigned integer per line.
std::vector<TokenId> read_tokens(const std::filesystem::path& path);
void write_tokens(const std::filesystem::path& path, std::span<const TokenId> tokens);

}  // namespace gali
