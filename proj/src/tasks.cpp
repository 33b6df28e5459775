#include "shadowpeft/tasks.hpp"

namespace shadowpeft {
namespace {

constexpr int64_t kModAddP = 13;
constexpr int32_t kModAddSep = 13;
constexpr int32_t kParityMark = 1;
constexpr int32_t kParityMaxMarks = 3;

}  // namespace

SyntheticTask SyntheticTask::make(const std::string& name, int64_t vocab, int64_t seq_override) {
  SyntheticTask t;
  t.name = name;
  t.vocab = vocab;
  if (name == "copy_lm") {
    t.seq_len = seq_override > 0 ? seq_override : 32;
    if (t.seq_len < 4 || t.seq_len % 2 != 0) {
      throw ConfigError("copy_lm: sequence length must be even and >= 4");
    }
    if (vocab < 2) throw ConfigError("copy_lm: vocab must be >= 2");
  } else if (name == "modadd_lm") {
    t.seq_len = 4;  // [a, b, sep, (a+b) mod p]
    if (seq_override > 0 && seq_override != 4) {
      throw ConfigError("modadd_lm: sequence length is fixed at 4");
    }
    if (vocab < kModAddSep + 1) {
      throw ConfigError("modadd_lm: vocab must be >= " + std::to_string(kModAddSep + 1));
    }
  } else if (name == "parity_cls") {
    t.seq_len = seq_override > 0 ? seq_override : 16;
    t.is_classification = true;
    t.classes = 2;
    if (vocab < 3) throw ConfigError("parity_cls: vocab must be >= 3");
    if (t.seq_len < kParityMaxMarks + 1) {
      throw ConfigError("parity_cls: sequence length must be >= " +
                        std::to_string(kParityMaxMarks + 1));
    }
  } else {
    throw ConfigError("unknown task '" + name + "'");
  }
  return t;
}

Batch SyntheticTask::sample(const RngFactory& rng, const std::string& split, int64_t index,
                            int64_t batch_size) const {
  auto stream = rng.stream("task/" + name + "/" + split, static_cast<uint64_t>(index));
  Batch batch;
  batch.tokens = IntMatrix::filled(batch_size, seq_len, 0);
  batch.lm_targets = IntMatrix::filled(batch_size, seq_len, ignore_index);
  batch.pad_mask.assign(static_cast<size_t>(batch_size * seq_len), 1);

  if (name == "copy_lm") {
    const int64_t half = seq_len / 2;
    std::uniform_int_distribution<int32_t> tok(0, static_cast<int32_t>(vocab - 1));
    for (int64_t b = 0; b < batch_size; ++b) {
      for (int64_t i = 0; i < half; ++i) {
        const int32_t v = tok(stream);
        batch.tokens.at(b, i) = v;
        batch.tokens.at(b, half + i) = v;
      }
      // loss only over the copied half: predicting tokens[half .. T-1]
      for (int64_t t = half - 1; t < seq_len - 1; ++t) {
        batch.lm_targets.at(b, t) = batch.tokens.at(b, t + 1);
      }
    }
  } else if (name == "modadd_lm") {
    std::uniform_int_distribution<int32_t> operand(0, static_cast<int32_t>(kModAddP - 1));
    for (int64_t b = 0; b < batch_size; ++b) {
      const int32_t a = operand(stream);
      const int32_t c = operand(stream);
      batch.tokens.at(b, 0) = a;
      batch.tokens.at(b, 1) = c;
      batch.tokens.at(b, 2) = kModAddSep;
      batch.tokens.at(b, 3) = static_cast<int32_t>((a + c) % kModAddP);
      batch.lm_targets.at(b, 2) = batch.tokens.at(b, 3);  // answer token only
    }
  } else {  // parity_cls
    // k marks at distinct positions, k uniform on {0..kParityMaxMarks}, so
    // the two parity classes are exactly balanced
    std::uniform_int_distribution<int32_t> mark_count(0, kParityMaxMarks);
    std::uniform_int_distribution<int32_t> filler(2, static_cast<int32_t>(vocab - 1));
    std::uniform_int_distribution<int64_t> position(0, seq_len - 1);
    batch.labels.resize(static_cast<size_t>(batch_size));
    for (int64_t b = 0; b < batch_size; ++b) {
      for (int64_t i = 0; i < seq_len; ++i) batch.tokens.at(b, i) = filler(stream);
      const int32_t marks = mark_count(stream);
      int32_t placed = 0;
      while (placed < marks) {
        const int64_t pos = position(stream);
        if (batch.tokens.at(b, pos) != kParityMark) {
          batch.tokens.at(b, pos) = kParityMark;
          ++placed;
        }
      }
      batch.labels[static_cast<size_t>(b)] = marks % 2;
    }
  }
  return batch;
}

double lm_accuracy(const Tensor& logits, const IntMatrix& targets, int32_t ignore_index) {
  if (logits.rank() != 3) throw DimensionError("lm_accuracy: logits must be [B,T,V]");
  const int64_t b = logits.dim(0), t = logits.dim(1), v = logits.dim(2);
  if (targets.rows != b || targets.cols != t) {
    throw DimensionError("lm_accuracy: target shape mismatch");
  }
  int64_t correct = 0, counted = 0;
  for (int64_t r = 0; r < b; ++r) {
    for (int64_t c = 0; c < t; ++c) {
      const int32_t want = targets.at(r, c);
      if (want == ignore_index) continue;
      const double* row = logits.data() + (r * t + c) * v;
      int64_t best = 0;
      for (int64_t j = 1; j < v; ++j) {
        if (row[j] > row[best]) best = j;
      }
      correct += (best == want) ? 1 : 0;
      ++counted;
    }
  }
  if (counted == 0) throw NumericalError("lm_accuracy: no scored positions");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

double cls_accuracy(const Tensor& logits, const std::vector<int32_t>& labels) {
  if (logits.rank() != 2) throw DimensionError("cls_accuracy: logits must be [B,C]");
  const int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b) {
    throw DimensionError("cls_accuracy: label count mismatch");
  }
  int64_t correct = 0;
  for (int64_t r = 0; r < b; ++r) {
    const double* row = logits.data() + r * c;
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    correct += (best == labels[static_cast<size_t>(r)]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(b);
}

}  // namespace shadowpeft
