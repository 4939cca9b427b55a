#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "evgraph/autodiff.hpp"
#include "evgraph/graph.hpp"

namespace evg::nn {

/// Non-zero basis functions of an open uniform B-spline at one coordinate.
struct Basis1D {
  int count = 0;
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
  bool clamped = false;  ///< input was outside [0, 1] (or NaN) and was clamped
};

/// Open uniform B-spline basis of degree 1..3 over `kernel_size` control points.
/// For degree 1: v = u (k - 1), i = min(floor(v), k - 2), weights (1 - (v - i), v - i).
/// A kernel size of 1 is a constant basis (single control point, weight 1).
Basis1D bspline_basis(double u, int degree, int kernel_size);

struct KernelSize {
  int kx = 5;
  int ky = 5;
  int count() const noexcept { return kx * ky; }
  friend bool operator==(const KernelSize&, const KernelSize&) = default;
};

/// Per-edge products of the two 1-D bases; control point p = ix + kx * iy.
struct EdgeBasis {
  int per_edge = 0;
  std::vector<std::uint32_t> index;  ///< num_edges * per_edge
  std::vector<double> weight;        ///< num_edges * per_edge
  std::size_t clamped = 0;           ///< diagnostics: coordinates that had to be clamped
};

EdgeBasis compute_edge_basis(std::span<const Pseudo> pseudo, int degree, KernelSize kernel);

/// Everything a spline convolution needs to know about one graph level.
struct ConvGraph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  EdgeBasis basis;
  KernelSize kernel;
  std::vector<double> inv_in_degree;  ///< 1/|N(i)|, 0 for isolated nodes
};

ConvGraph make_conv_graph(std::size_t num_nodes, std::span<const Edge> edges, std::span<const Pseudo> pseudo,
                          int degree, KernelSize kernel);

/// Spline-kernel graph convolution.
///
/// out(i) = 1/|N(i)| * sum_{j -> i} sum_p B_p(u(j, i)) * x(j) W_p + b, where N(i) are the
/// in-neighbours of i. Isolated nodes output the bias.
/// Shapes: x (N x Cin), weight (K x Cin x Cout), bias (Cout).
ad::Var spline_conv(ad::Var x, ad::Var weight, ad::Var bias, std::shared_ptr<const ConvGraph> graph);
/// Convenience overload; copies `graph` so the tape can outlive it.
ad::Var spline_conv(ad::Var x, ad::Var weight, ad::Var bias, const ConvGraph& graph);

/// Glorot-style bound used to initialise spline weights.
double spline_init_bound(int c_in, int c_out, int degree, KernelSize kernel);

/// Trainable spline convolution with its parameters.
class SplineConv {
 public:
  SplineConv() = default;
  SplineConv(std::string name, int c_in, int c_out, KernelSize kernel, int degree, Rng& rng);

  ad::Var forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> graph);

  int in_channels() const noexcept { return c_in_; }
  int out_channels() const noexcept { return c_out_; }
  KernelSize kernel() const noexcept { return kernel_; }
  int degree() const noexcept { return degree_; }
  ad::Parameter& weight() { return weight_; }
  ad::Parameter& bias() { return bias_; }

 private:
  int c_in_ = 0;
  int c_out_ = 0;
  KernelSize kernel_;
  int degree_ = 1;
  ad::Parameter weight_;
  ad::Parameter bias_;
};

}  // namespace evg::nn
