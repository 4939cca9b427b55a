#pragma once

#include <memory>
#include <string>
#include <vector>

#include "evgraph/autodiff.hpp"
#include "evgraph/random.hpp"
#include "evgraph/spline_conv.hpp"

namespace evg::nn {

/// Per-channel normalisation over all nodes of a batch.
struct BatchNormState {
  ad::Parameter gamma;
  ad::Parameter beta;
  ad::Tensor running_mean;
  ad::Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNormState() = default;
  BatchNormState(std::string name, int channels);
  std::string name;
  std::size_t channels() const noexcept { return running_mean.size(); }
};

/// Train mode normalises with the batch mean and biased variance and updates
/// the running statistics (unbiased variance); eval mode uses the running ones.
ad::Var batch_norm(ad::Var x, ad::Var gamma, ad::Var beta, BatchNormState& state, bool train);

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, int channels) : state_(std::move(name), channels) {}
  ad::Var forward(ad::Tape& tape, ad::Var x, bool train) {
    return batch_norm(x, tape.parameter(state_.gamma), tape.parameter(state_.beta), state_, train);
  }
  BatchNormState& state() { return state_; }

 private:
  BatchNormState state_;
};

enum class Activation { Identity, Relu };

/// f_q = act(sum_p sum_l F[p, l, q] x[p, l] + b_q) on flattened (batch x P*M_in) input.
ad::Var fully_connected(ad::Var x, ad::Var weight, ad::Var bias, Activation act);

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out, Rng& rng);
  ad::Var forward(ad::Tape& tape, ad::Var x, Activation act) {
    return fully_connected(x, tape.parameter(weight_), tape.parameter(bias_), act);
  }
  ad::Parameter& weight() { return weight_; }
  ad::Parameter& bias() { return bias_; }
  int in_features() const { return static_cast<int>(weight_.value.dim(0)); }
  int out_features() const { return static_cast<int>(weight_.value.dim(1)); }

 private:
  ad::Parameter weight_;
  ad::Parameter bias_;
};

/// Conv -> BN -> ReLU.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int c_in, int c_out, KernelSize kernel, int degree, Rng& rng);
  ad::Var forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> graph, bool train);
  SplineConv& conv() { return conv_; }
  BatchNorm& bn() { return bn_; }

 private:
  SplineConv conv_;
  BatchNorm bn_;
};

/// Res_g(c_in, c_out): ReLU(BN(conv_k(x)) + BN(conv_1x1(x))).
/// With `two_conv` the main path is conv_k -> BN -> ReLU -> conv_k -> BN.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int c_in, int c_out, KernelSize kernel, int degree, bool two_conv, Rng& rng);
  /// `main_graph` is prepared for the block's kernel, `shortcut_graph` for a 1x1 kernel.
  ad::Var forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> main_graph,
                  std::shared_ptr<const ConvGraph> shortcut_graph, bool train);

  SplineConv& main_conv() { return main_; }
  SplineConv* second_conv() { return two_conv_ ? &main2_ : nullptr; }
  SplineConv& shortcut_conv() { return shortcut_; }
  BatchNorm& main_bn() { return main_bn_; }
  BatchNorm* second_bn() { return two_conv_ ? &main2_bn_ : nullptr; }
  BatchNorm& shortcut_bn() { return shortcut_bn_; }
  bool two_conv() const { return two_conv_; }

 private:
  bool two_conv_ = false;
  SplineConv main_;
  BatchNorm main_bn_;
  SplineConv main2_;
  BatchNorm main2_bn_;
  SplineConv shortcut_;
  BatchNorm shortcut_bn_;
};

}  // namespace evg::nn
