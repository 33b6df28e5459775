#include "shadowpeft/injection.hpp"

namespace shadowpeft {

InjectionModule InjectionModule::init(int64_t base_layers, int64_t hidden, int64_t rank,
                                      double alpha, double sigma, double dropout_rate,
                                      const RngFactory& rng, DType dtype) {
  if (rank < 1 || rank >= hidden) {
    throw ConfigError("injection: rank must satisfy 1 <= r < d");
  }
  if (alpha <= 0.0) throw ConfigError("injection: strength alpha must be > 0");
  InjectionModule m;
  m.rank = rank;
  m.alpha = alpha;
  m.sigma = sigma;
  m.dropout_rate = dropout_rate;
  // layer 0 has no slot by construction; injection starts at layer 1
  for (int64_t l = 1; l < base_layers; ++l) {
    auto stream = rng.stream("init/inject.down", static_cast<uint64_t>(l));
    m.down.push_back(randn({hidden, rank}, stream, sigma, dtype));
    m.up.push_back(Tensor::zeros({rank, hidden}, dtype));
  }
  return m;
}

Tensor InjectionModule::compute_delta(Tape* tape, const Tensor& h_prev, const Tensor& s_prev) {
  return ops::sub(tape, h_prev, s_prev);
}

Tensor InjectionModule::bottleneck(Tape* tape, const Tensor& delta, int64_t layer, Mode mode,
                                   const RngFactory& rng, int64_t step) const {
  if (layer < 1 || layer > layer_count()) {
    throw IndexError("injection bottleneck: layer " + std::to_string(layer) + " outside [1," +
                     std::to_string(layer_count()) + "]");
  }
  const auto idx = static_cast<size_t>(layer - 1);
  Tensor low = ops::matmul(tape, delta, down[idx]);
  auto stream = rng.stream("dropout/inject", static_cast<uint64_t>(layer),
                           static_cast<uint64_t>(step));
  Tensor dropped = ops::dropout(tape, low, dropout_rate, mode, stream);
  return ops::matmul(tape, dropped, up[idx]);
}

Tensor InjectionModule::inject(Tape* tape, const Tensor& h_prev, const Tensor& delta_tilde) const {
  return ops::add_scaled(tape, h_prev, delta_tilde, alpha);
}

int64_t InjectionModule::param_count() const {
  int64_t n = 0;
  for (const auto& t : down) n += t.numel();
  for (const auto& t : up) n += t.numel();
  return n;
}

void InjectionModule::set_trainable(bool v) {
  for (auto& t : down) t.set_requires_grad(v);
  for (auto& t : up) t.set_requires_grad(v);
}

void InjectionModule::collect_params(std::vector<NamedParam>& out) const {
  for (size_t i = 0; i < down.size(); ++i) {
    const std::string l = std::to_string(i + 1);
    out.push_back({"inject.L" + l + ".down", down[i]});
    out.push_back({"inject.L" + l + ".up", up[i]});
  }
}

}  // namespace shadowpeft
