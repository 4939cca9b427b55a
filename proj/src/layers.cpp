#include "evgraph/layers.hpp"

#include <cmath>

#include "evgraph/errors.hpp"

namespace evg::nn {

BatchNormState::BatchNormState(std::string name_, int channels)
    : gamma(name_ + ".gamma", ad::Tensor({static_cast<std::size_t>(channels)}, 1.0)),
      beta(name_ + ".beta", ad::Tensor({static_cast<std::size_t>(channels)}, 0.0)),
      running_mean({static_cast<std::size_t>(channels)}, 0.0),
      running_var({static_cast<std::size_t>(channels)}, 1.0),
      name(std::move(name_)) {}

ad::Var batch_norm(ad::Var x, ad::Var gamma, ad::Var beta, BatchNormState& state, bool train) {
  const auto& vx = x.value();
  const std::size_t c = state.channels();
  if (vx.rank() != 2 || vx.dim(1) != c || gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("batch_norm: input " + ad::shape_string(vx.shape()) + " for " + std::to_string(c) + " channels");
  }
  const std::size_t n = vx.dim(0);
  std::vector<double> mean(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  if (train && n > 0) {
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < c; ++k) mean[k] += vx[i * c + k];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        const double d = vx[i * c + k] - mean[k];
        var[k] += d * d;
      }
    }
    for (std::size_t k = 0; k < c; ++k) {
      const double biased = var[k] / static_cast<double>(n);
      const double unbiased = n > 1 ? var[k] / static_cast<double>(n - 1) : biased;
      inv_std[k] = 1.0 / std::sqrt(biased + state.eps);
      state.running_mean[k] = (1.0 - state.momentum) * state.running_mean[k] + state.momentum * mean[k];
      state.running_var[k] = (1.0 - state.momentum) * state.running_var[k] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = state.running_mean[k];
      inv_std[k] = 1.0 / std::sqrt(state.running_var[k] + state.eps);
    }
  }

  const auto& g = gamma.value();
  const auto& b = beta.value();
  std::vector<double> xhat(n * c);
  ad::Tensor out(vx.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      xhat[i * c + k] = (vx[i * c + k] - mean[k]) * inv_std[k];
      out[i * c + k] = g[k] * xhat[i * c + k] + b[k];
    }
  }
  const bool batch_stats = train && n > 0;
  const int ix = x.id();
  const int ig = gamma.id();
  const int ibeta = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ibeta, n, c, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](ad::Tape& t, int self) {
        const auto& dy = t.grad(self);
        std::vector<double> sum_dy(c, 0.0);
        std::vector<double> sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            sum_dy[k] += dy[i * c + k];
            sum_dy_xhat[k] += dy[i * c + k] * xhat[i * c + k];
          }
        }
        if (t.requires_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t k = 0; k < c; ++k) gg[k] += sum_dy_xhat[k];
        }
        if (t.requires_grad(ibeta)) {
          auto& gb = t.grad(ibeta);
          for (std::size_t k = 0; k < c; ++k) gb[k] += sum_dy[k];
        }
        if (!t.requires_grad(ix)) return;
        const auto& gamma_v = t.value(ig);
        auto& gx = t.grad(ix);
        const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            const double s = gamma_v[k] * inv_std[k];
            if (batch_stats) {
              gx[i * c + k] +=
                  s * (dy[i * c + k] - inv_n * sum_dy[k] - xhat[i * c + k] * inv_n * sum_dy_xhat[k]);
            } else {
              gx[i * c + k] += s * dy[i * c + k];
            }
          }
        }
      });
}

ad::Var fully_connected(ad::Var x, ad::Var weight, ad::Var bias, Activation act) {
  const auto& w = weight.value();
  if (w.rank() != 2 || x.value().rank() != 2 || x.value().dim(1) != w.dim(0)) {
    throw ShapeError("fully_connected: input " + ad::shape_string(x.shape()) + " does not match weight " +
                     ad::shape_string(w.shape()));
  }
  auto y = ad::add(ad::matmul(x, weight), bias);
  return act == Activation::Relu ? ad::relu(y) : y;
}

Linear::Linear(std::string name, int in, int out, Rng& rng) {
  if (in < 1 || out < 1) throw ShapeError("linear " + name + ": sizes must be positive");
  ad::Tensor w({static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
  const double bound = std::sqrt(1.0 / in);
  for (auto& v : w.data()) v = uniform(rng, -bound, bound);
  weight_ = ad::Parameter(name + ".weight", std::move(w));
  bias_ = ad::Parameter(name + ".bias", ad::Tensor({static_cast<std::size_t>(out)}));
}

ConvBlock::ConvBlock(const std::string& name, int c_in, int c_out, KernelSize kernel, int degree, Rng& rng)
    : conv_(name + ".conv", c_in, c_out, kernel, degree, rng), bn_(name + ".bn", c_out) {}

ad::Var ConvBlock::forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> graph, bool train) {
  return ad::relu(bn_.forward(tape, conv_.forward(tape, x, std::move(graph)), train));
}

ResidualBlock::ResidualBlock(const std::string& name, int c_in, int c_out, KernelSize kernel, int degree,
                             bool two_conv, Rng& rng)
    : two_conv_(two_conv),
      main_(name + ".main", c_in, c_out, kernel, degree, rng),
      main_bn_(name + ".main_bn", c_out),
      shortcut_(name + ".shortcut", c_in, c_out, KernelSize{1, 1}, degree, rng),
      shortcut_bn_(name + ".shortcut_bn", c_out) {
  if (two_conv) {
    main2_ = SplineConv(name + ".main2", c_out, c_out, kernel, degree, rng);
    main2_bn_ = BatchNorm(name + ".main2_bn", c_out);
  }
}

ad::Var ResidualBlock::forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> main_graph,
                               std::shared_ptr<const ConvGraph> shortcut_graph, bool train) {
  auto main = main_bn_.forward(tape, main_.forward(tape, x, main_graph), train);
  if (two_conv_) main = main2_bn_.forward(tape, main2_.forward(tape, ad::relu(main), main_graph), train);
  auto shortcut = shortcut_bn_.forward(tape, shortcut_.forward(tape, x, std::move(shortcut_graph)), train);
  return ad::relu(ad::add(main, shortcut));
}

}  // namespace evg::nn
