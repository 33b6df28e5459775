#include "shadowpeft/rng.hpp"

namespace shadowpeft {

Tensor randn(Shape shape, std::mt19937_64& rng, double stdev, DType dtype) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  std::normal_distribution<double> dist(0.0, stdev);
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.at(i) = dist(rng);
  t.apply_precision();
  return t;
}

}  // namespace shadowpeft
