#pragma once

// Layer-major recomputation of a whole processing history without a KV cache.
// Each span (prefill chunk or decode token) is replayed with the position
// assignment it saw when it was processed, using the serial reference
// kernels. Cached inference must agree with it.

#include <cstdint>
#include <span>
#include <vector>

#include "gali/model.hpp"

namespace gali {

struct ScheduledSpan {
  std::size_t size = 0;
  std::uint32_t step = 0;
};

/// The schedule forward_prefill followed by `decode_steps` decode_step calls
/// (steps numbered 1..decode_steps) would produce.
std::vector<ScheduledSpan> inference_schedule(std::size_t prompt_len, std::size_t decode_steps,
                                              const RunMode& mode);

/// Logits (tokens x vocab) for every token of `tokens` under `schedule`.
Matrix recompute_logits(const Model& model, std::span<const TokenId> tokens,
                        std::span<const ScheduledSpan> schedule, const RunMode& mode);

}  // namespace gali
