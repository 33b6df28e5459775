#pragma once

#include <random>

#include "shadowpeft/tensor.hpp"

namespace shadowpeft {

enum class Mode { kTrain, kEval };

/// Primitive ops. Every op validates shapes, checks its output for NaN/Inf,
/// and, when `tape` is non-null and some differentiable input requires grad,
/// records a backward closure on the tape. Pass tape == nullptr for pure
/// evaluation.
namespace ops {

// elementwise
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
/// a + s * b, same shape.
Tensor add_scaled(Tape* tape, const Tensor& a, const Tensor& b, double s);
Tensor silu(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);

/// a: [..., m, k] with any number of leading dims folded into rows, b: [k, n].
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
/// Batched matmul, a: [*, m, k], b: [*, k, n] with identical leading dims.
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b);
/// Swaps the last two axes (copying).
Tensor transpose_last2(Tape* tape, const Tensor& x);
/// Swaps axes 1 and 2 of a rank-4 tensor (head split/merge).
Tensor transpose_12(Tape* tape, const Tensor& x);
Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape);

/// Per-row normalization over the last axis, then affine with gamma/beta.
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
/// Softmax over the last axis.
Tensor softmax_rows(Tape* tape, const Tensor& x);
/// x: [*, T, T]; row i is softmaxed over columns j <= i, columns j > i are 0.
Tensor causal_softmax(Tape* tape, const Tensor& x);

/// Mean negative log-softmax over rows whose target != ignore_index.
/// logits: [N, V], targets: N entries.
Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int32_t>& targets,
                     int32_t ignore_index);

/// Inverted dropout; identity when mode == kEval or p == 0.
Tensor dropout(Tape* tape, const Tensor& x, double p, Mode mode, std::mt19937_64& rng);

/// Row lookup: table [V, d], ids [B, T] -> [B, T, d].
Tensor embedding(Tape* tape, const Tensor& table, const IntMatrix& ids);
/// x: [B, T, d], row_index: B entries in [0, T) -> [B, d].
Tensor select_rows(Tape* tape, const Tensor& x, const std::vector<int64_t>& row_index);
/// Mean over unmasked positions per batch row; mask: [B, T] (true = keep).
Tensor mean_rows_masked(Tape* tape, const Tensor& x, const std::vector<uint8_t>& mask);

}  // namespace ops

/// FNV-1a over the raw little-endian bytes of the tensor data.
uint64_t tensor_checksum(const Tensor& t);
uint64_t combine_checksum(uint64_t acc, uint64_t value);

}  // namespace shadowpeft
