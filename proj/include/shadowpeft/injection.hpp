#pragma once

#include "shadowpeft/backbone.hpp"

namespace shadowpeft {

/// Low-rank injection of the base-shadow discrepancy, one (down, up) pair per
/// layer 1..L-1. At construction every up matrix is all-zeros, so the first
/// attached forward reproduces the frozen base exactly.
class InjectionModule {
 public:
  int64_t rank = 0;
  double alpha = 1.0;
  double sigma = 0.02;
  double dropout_rate = 0.0;
  std::vector<Tensor> down;  // index l-1 holds layer l, shape [d, r]
  std::vector<Tensor> up;    // shape [r, d]

  static InjectionModule init(int64_t base_layers, int64_t hidden, int64_t rank, double alpha,
                              double sigma, double dropout_rate, const RngFactory& rng,
                              DType dtype);

  /// delta = h_prev - s_prev.
  static Tensor compute_delta(Tape* tape, const Tensor& h_prev, const Tensor& s_prev);
  /// Dropout(delta W_down) W_up for the given layer in [1, L-1].
  Tensor bottleneck(Tape* tape, const Tensor& delta, int64_t layer, Mode mode,
                    const RngFactory& rng, int64_t step) const;
  /// h_prev + alpha * delta_tilde.
  Tensor inject(Tape* tape, const Tensor& h_prev, const Tensor& delta_tilde) const;

  int64_t layer_count() const { return static_cast<int64_t>(down.size()); }
  int64_t param_count() const;
  void set_trainable(bool v);
  void collect_params(std::vector<NamedParam>& out) const;  // inject.L{l}.{down|up}
};

}  // namespace shadowpeft
