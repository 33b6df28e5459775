#pragma once

#include "shadowpeft/rng.hpp"

namespace shadowpeft {

struct Batch {
  IntMatrix tokens;              // [B, T]
  IntMatrix lm_targets;          // [B, T], shifted next-token labels, ignore_index elsewhere
  std::vector<int32_t> labels;   // classification tasks
  std::vector<uint8_t> pad_mask; // [B*T], nonzero = real token
};

/// Deterministic generators for the desk-scale tasks. Train, eval and
/// pretrain batches come from disjoint named RNG streams, so the splits never
/// share a generator state and any (seed, split, index) regenerates the same
/// batch bit for bit.
class SyntheticTask {
 public:
  std::string name;
  int64_t vocab = 0;
  int64_t seq_len = 0;
  int64_t classes = 2;
  bool is_classification = false;
  int32_t ignore_index = -100;

  /// seq_override == 0 keeps the task default. Throws ConfigError when the
  /// vocabulary cannot host the task's token set.
  static SyntheticTask make(const std::string& name, int64_t vocab, int64_t seq_override = 0);

  Batch sample(const RngFactory& rng, const std::string& split, int64_t index,
               int64_t batch_size) const;
};

/// Fraction of non-ignored positions where argmax(logits) equals the target.
double lm_accuracy(const Tensor& logits, const IntMatrix& targets, int32_t ignore_index);
/// Fraction of rows where argmax(logits) equals the label.
double cls_accuracy(const Tensor& logits, const std::vector<int32_t>& labels);

}  // namespace shadowpeft
